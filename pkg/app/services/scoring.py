import json
from pathlib import Path
from typing import Dict, List, NamedTuple, Sequence, Union

from app.exceptions import DataError
from app.schemas.decoding import EvalReport, UtteranceScore
from app.services.manifest import read_manifest_entries
from app.utils.logger import setup_logger

logger = setup_logger()


class EditCounts(NamedTuple):
    substitutions: int
    deletions: int
    insertions: int

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def edit_distance(ref: Sequence, hyp: Sequence) -> EditCounts:
    """
    Unit-cost Levenshtein alignment of hyp against ref.

    Among minimal alignments the one with the most substitutions wins; remaining ties
    prefer deletions over insertions.
    """
    rows, cols = len(ref) + 1, len(hyp) + 1
    # cell = (total, -substitutions, -deletions, S, D, I); min() picks the preferred alignment
    table: List[List[tuple]] = [[None] * cols for _ in range(rows)]
    table[0][0] = (0, 0, 0, 0, 0, 0)
    for i in range(1, rows):
        table[i][0] = (i, 0, -i, 0, i, 0)
    for j in range(1, cols):
        table[0][j] = (j, 0, 0, 0, 0, j)
    for i in range(1, rows):
        for j in range(1, cols):
            diag = table[i - 1][j - 1]
            if ref[i - 1] == hyp[j - 1]:
                match = diag
            else:
                match = (diag[0] + 1, diag[1] - 1, diag[2], diag[3] + 1, diag[4], diag[5])
            up = table[i - 1][j]
            delete = (up[0] + 1, up[1], up[2] - 1, up[3], up[4] + 1, up[5])
            left = table[i][j - 1]
            insert = (left[0] + 1, left[1], left[2], left[3], left[4], left[5] + 1)
            table[i][j] = min(match, delete, insert)
    best = table[-1][-1]
    return EditCounts(best[3], best[4], best[5])


def read_hypotheses(path: Union[str, Path]) -> Dict[str, str]:
    """utt_id<TAB>text per line; a missing text column means an empty hypothesis."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"hypothesis file {path} does not exist")
    hyps: Dict[str, str] = {}
    for line_number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        utt_id, _, text = line.partition("\t")
        utt_id = utt_id.strip()
        if utt_id in hyps:
            raise DataError(f"line {line_number}: duplicate hypothesis", utt_id)
        hyps[utt_id] = text.strip()
    return hyps


def write_hypotheses(path: Union[str, Path], hyps: Dict[str, str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{utt_id}\t{text}\n" for utt_id, text in hyps.items()), encoding="utf-8")
    return path


def score_corpus(refs: Dict[str, str], hyps: Dict[str, str]) -> EvalReport:
    """Pooled WER over space-split words and CER over characters (spaces included)."""
    missing = sorted(set(refs) - set(hyps))
    extra = sorted(set(hyps) - set(refs))
    if missing or extra:
        raise DataError(f"utterance ids do not align: missing hypotheses {missing}, unknown ids {extra}")

    utterances: List[UtteranceScore] = []
    char_errors = ref_chars = 0
    for utt_id, ref in refs.items():
        hyp = hyps[utt_id]
        words = edit_distance(ref.split(), hyp.split())
        utterances.append(
            UtteranceScore(
                utt_id=utt_id,
                substitutions=words.substitutions,
                deletions=words.deletions,
                insertions=words.insertions,
                reference_words=len(ref.split()),
            )
        )
        char_errors += edit_distance(ref, hyp).total
        ref_chars += len(ref)

    subs = sum(u.substitutions for u in utterances)
    dels = sum(u.deletions for u in utterances)
    ins = sum(u.insertions for u in utterances)
    ref_words = sum(u.reference_words for u in utterances)
    if ref_words == 0:
        raise DataError("reference transcripts contain no words")
    return EvalReport(
        substitutions=subs,
        deletions=dels,
        insertions=ins,
        reference_words=ref_words,
        character_errors=char_errors,
        reference_characters=ref_chars,
        wer=(subs + dels + ins) / ref_words,
        cer=char_errors / ref_chars,
        utterances=utterances,
    )


def evaluate(manifest: Union[str, Path], hyp_file: Union[str, Path]) -> EvalReport:
    refs = {entry.utt_id: entry.transcript for entry in read_manifest_entries(manifest)}
    report = score_corpus(refs, read_hypotheses(hyp_file))
    logger.info(f"Evaluated {len(refs)} utterances: WER {report.wer:.4f}, CER {report.cer:.4f}")
    return report


def summary_lines(report: EvalReport) -> List[str]:
    return [
        f"WER {report.wer:.4f} ({report.substitutions + report.deletions + report.insertions}/{report.reference_words}"
        f" S={report.substitutions} D={report.deletions} I={report.insertions})",
        f"CER {report.cer:.4f} ({report.character_errors}/{report.reference_characters})",
    ]


def format_report(report: EvalReport) -> str:
    lines = ["#utt_id\tS\tD\tI\tN\twer"]
    for u in report.utterances:
        lines.append(f"{u.utt_id}\t{u.substitutions}\t{u.deletions}\t{u.insertions}\t{u.reference_words}\t{u.wer:.4f}")
    lines.extend(summary_lines(report))
    return "\n".join(lines) + "\n"


def write_report(path: Union[str, Path], report: EvalReport) -> Path:
    """Plain text report, or JSON when the path ends in .json."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".json":
        path.write_text(json.dumps(report.model_dump(), indent=2), encoding="utf-8")
    else:
        path.write_text(format_report(report), encoding="utf-8")
    return path
