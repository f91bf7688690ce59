from typing import List, Optional, Sequence

import numpy as np

from app.exceptions import ConfigError, DataError
from app.schemas.data import Batch, Utterance
from app.services.vocab import Vocab
from app.tensor.rng import RngStream
from app.utils.logger import setup_logger

logger = setup_logger()


def collate(utterances: Sequence[Utterance], vocab: Vocab) -> Batch:
    """Pad a group of utterances into one Batch; pad regions are zero / <pad>."""
    if not utterances:
        raise DataError("cannot collate an empty group of utterances")
    frame_lengths = np.array([u.num_frames for u in utterances])
    mel_bins = {u.features.shape[1] for u in utterances}
    if len(mel_bins) != 1:
        raise DataError(f"utterances in one batch disagree on mel bins: {sorted(mel_bins)}")
    encoded = [vocab.encode(u.transcript) for u in utterances]
    target_lengths = np.array([len(ids) + 1 for ids in encoded])

    features = np.zeros((len(utterances), frame_lengths.max(), mel_bins.pop()))
    inputs = np.full((len(utterances), target_lengths.max()), vocab.pad_id, dtype=np.int64)
    targets = np.full_like(inputs, vocab.pad_id)
    for row, (utt, ids) in enumerate(zip(utterances, encoded)):
        features[row, :utt.num_frames] = utt.features
        inputs[row, :len(ids) + 1] = [vocab.bos_id] + ids
        targets[row, :len(ids) + 1] = ids + [vocab.eos_id]
    return Batch(
        utt_ids=[u.utt_id for u in utterances],
        features=features,
        frame_lengths=frame_lengths,
        decoder_inputs=inputs,
        decoder_targets=targets,
        target_lengths=target_lengths,
    )


def make_batches(
    dataset: Sequence[Utterance],
    vocab: Vocab,
    frame_budget: int,
    shuffle_seed: Optional[int] = None,
) -> List[Batch]:
    """
    Length-bucketed batches whose padded frame count (rows x longest utterance) stays
    within `frame_budget`. The same seed always yields the same batches in the same order.
    """
    if frame_budget < 1:
        raise ConfigError(f"frame budget must be positive, got {frame_budget}")
    for utt in dataset:
        if utt.num_frames > frame_budget:
            raise DataError(f"{utt.num_frames} frames exceed the batch frame budget {frame_budget}", utt.utt_id)
    if not dataset:
        return []

    rng = RngStream(shuffle_seed) if shuffle_seed is not None else None
    order = rng.permutation(len(dataset)) if rng else np.arange(len(dataset))
    # stable sort keeps the shuffled order among equal lengths
    order = sorted(order, key=lambda i: dataset[i].num_frames)

    groups: List[List[Utterance]] = []
    current: List[Utterance] = []
    for index in order:
        utt = dataset[index]
        # sorted ascending, so the newcomer is the longest member
        if current and (len(current) + 1) * utt.num_frames > frame_budget:
            groups.append(current)
            current = []
        current.append(utt)
    groups.append(current)

    if rng:
        groups = [groups[i] for i in rng.permutation(len(groups))]
    batches = [collate(group, vocab) for group in groups]
    logger.debug(f"Built {len(batches)} batches from {len(dataset)} utterances (frame budget {frame_budget})")
    return batches
