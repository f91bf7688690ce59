"""Deterministic toy corpus in the manifest + FBANK1 format."""
from pathlib import Path
from typing import List, Union

import numpy as np

from app.exceptions import ConfigError
from app.schemas.data import ManifestEntry
from app.services.features import write_features
from app.services.manifest import write_manifest
from app.tensor.rng import RngStream
from app.utils.logger import setup_logger

logger = setup_logger()

WORDS = (
    "see", "spot", "run", "the", "cat", "sat", "on", "mat", "a", "dog",
    "big", "red", "sun", "go", "up", "hop", "top", "fun", "is", "it",
)
ALPHABET = "abcdefghijklmnopqrstuvwxyz "
MEL_BINS = 40
TARGET_FRAMES = 100
MAX_TRANSCRIPT = 20
RECORDINGS = 5


def _transcript(rng: RngStream) -> str:
    words: List[str] = []
    order = rng.permutation(len(WORDS))
    for index in order:
        candidate = " ".join(words + [WORDS[index]])
        if len(candidate) > MAX_TRANSCRIPT:
            break
        words.append(WORDS[index])
    return " ".join(words)


def make_synthetic_corpus(out_dir: Union[str, Path], num_utts: int = 50, seed: int = 0) -> Path:
    """
    Each character maps to a fixed random 40-bin template; an utterance is its
    transcript's templates repeated to roughly 100 frames, plus noise and a
    per-recording channel offset. Returns the manifest path.
    """
    if num_utts < 1:
        raise ConfigError(f"number of utterances must be >= 1, got {num_utts}")
    out_dir = Path(out_dir)
    rng = RngStream(seed)
    templates = rng.normal((len(ALPHABET), MEL_BINS), scale=2.0)
    offsets = rng.normal((RECORDINGS, MEL_BINS), scale=3.0)

    entries: List[ManifestEntry] = []
    for index in range(num_utts):
        utt_rng = rng.spawn(f"utt{index}")
        text = _transcript(utt_rng)
        frames_per_char = max(1, TARGET_FRAMES // len(text))
        ids = np.repeat([ALPHABET.index(ch) for ch in text], frames_per_char)
        recording = index % RECORDINGS
        features = templates[ids] + offsets[recording] + utt_rng.normal((len(ids), MEL_BINS), scale=0.1)
        utt_id = f"synth{index:04d}"
        write_features(out_dir / "feats" / f"{utt_id}.fbank", features)
        entries.append(
            ManifestEntry(
                utt_id=utt_id,
                recording_id=f"rec{recording}",
                feature_path=f"feats/{utt_id}.fbank",
                transcript=text,
            )
        )
    manifest = write_manifest(out_dir / "manifest.tsv", entries)
    logger.info(f"Wrote synthetic corpus of {num_utts} utterances to {out_dir}")
    return manifest
