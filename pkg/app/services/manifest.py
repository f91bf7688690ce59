from pathlib import Path
from typing import Iterable, List, Optional, Union

from pydantic import ValidationError

from app.exceptions import DataError, ManifestError
from app.schemas.data import ManifestEntry, Utterance
from app.services.features import read_features
from app.utils.logger import setup_logger

logger = setup_logger()

COLUMNS = ("utt_id", "recording_id", "feature_path", "transcript")


def _validation_message(error: ValidationError) -> str:
    return "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in error.errors())


def read_manifest_entries(path: Union[str, Path]) -> List[ManifestEntry]:
    """
    Parse the UTF-8 TSV manifest. Feature paths are resolved against the manifest's
    directory; transcripts are lowercased. Blank and '#' lines are skipped.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest {path} does not exist")
    entries: List[ManifestEntry] = []
    failures: List[DataError] = []
    seen = set()
    for line_number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        utt_id = fields[0].strip() or f"line {line_number}"
        if len(fields) != len(COLUMNS):
            failures.append(DataError(f"line {line_number}: expected {len(COLUMNS)} tab-separated columns, got {len(fields)}", utt_id))
            logger.warning(f"Manifest {path} line {line_number}: wrong column count")
            continue
        try:
            entry = ManifestEntry(
                utt_id=fields[0].strip(),
                recording_id=fields[1].strip(),
                feature_path=str(path.parent / fields[2].strip()),
                transcript=fields[3].strip().lower(),
            )
        except ValidationError as e:
            failures.append(DataError(f"line {line_number}: {_validation_message(e)}", utt_id))
            logger.warning(f"Validation error for manifest line {line_number}: {e.errors()}")
            continue
        if entry.utt_id in seen:
            failures.append(DataError(f"line {line_number}: duplicate utterance id", entry.utt_id))
            continue
        seen.add(entry.utt_id)
        entries.append(entry)
    if failures:
        raise ManifestError(failures)
    return entries


def load_manifest(path: Union[str, Path], expected_bins: Optional[int] = None) -> List[Utterance]:
    """One Utterance per manifest line, in file order; every failing line is reported together."""
    entries = read_manifest_entries(path)
    if not entries:
        logger.warning(f"Manifest {path} is empty")
        return []

    utterances: List[Utterance] = []
    failures: List[DataError] = []
    for entry in entries:
        try:
            features = read_features(entry.feature_path, entry.utt_id, expected_bins)
            utterances.append(
                Utterance(
                    utt_id=entry.utt_id,
                    recording_id=entry.recording_id,
                    features=features,
                    transcript=entry.transcript,
                )
            )
        except DataError as e:
            failures.append(e)
            logger.warning(f"Failed to load utterance: {e}")
        except ValidationError as e:
            failures.append(DataError(_validation_message(e), entry.utt_id))
            logger.warning(f"Validation error for utterance {entry.utt_id}: {e.errors()}")

    logger.info(f"Manifest {path} loaded. Successful: {len(utterances)}, Failed: {len(failures)}")
    if failures:
        raise ManifestError(failures)
    return utterances


def write_manifest(path: Union[str, Path], rows: Iterable[ManifestEntry]) -> Path:
    """Feature paths are written as given; keep them relative to the manifest's directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["#" + "\t".join(COLUMNS)]
    for row in rows:
        lines.append("\t".join([row.utt_id, row.recording_id, row.feature_path, row.transcript]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
