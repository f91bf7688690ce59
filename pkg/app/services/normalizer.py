from collections import defaultdict
from typing import Dict, List, Sequence, Tuple

import numpy as np

from app.schemas.data import Utterance

STD_FLOOR = 1e-8


def bin_statistics(frames: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per mel bin mean and floored standard deviation over all rows."""
    return frames.mean(axis=0), np.maximum(frames.std(axis=0), STD_FLOOR)


def standardize(features: np.ndarray) -> np.ndarray:
    """Normalise one feature matrix as its own recording."""
    mean, std = bin_statistics(features)
    return (features - mean) / std


def recording_statistics(utterances: Sequence[Utterance]) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    groups: Dict[str, List[np.ndarray]] = defaultdict(list)
    for utt in utterances:
        groups[utt.recording_id].append(utt.features)
    return {rec: bin_statistics(np.concatenate(mats, axis=0)) for rec, mats in groups.items()}


def normalize_per_recording(utterances: Sequence[Utterance]) -> List[Utterance]:
    """Mean/variance normalisation per recording and mel bin; returns new utterances in the same order."""
    stats = recording_statistics(utterances)
    normalized = []
    for utt in utterances:
        mean, std = stats[utt.recording_id]
        normalized.append(utt.model_copy(update={"features": (utt.features - mean) / std}))
    return normalized
