from typing import Literal, Optional, Union

import numpy as np

from app.exceptions import ConfigError, DataError, DimensionError
from app.tensor import ops
from app.tensor.ops import Mode, check_probability
from app.tensor.rng import RngStream
from app.tensor.tensor import Tensor


def smoothed_targets(targets: np.ndarray, vocab_size: int, epsilon: float, pad_id: int) -> np.ndarray:
    """
    Target distributions: 1 - eps on the gold class, eps spread evenly over the
    remaining non-pad classes, nothing on <pad>. Rows for pad positions are zero.
    """
    if vocab_size < 3:
        raise DimensionError(f"label smoothing needs at least 3 classes, got {vocab_size}")
    dist = np.full(targets.shape + (vocab_size,), epsilon / (vocab_size - 2))
    dist[..., pad_id] = 0.0
    np.put_along_axis(dist, targets[..., None], 1.0 - epsilon, axis=-1)
    dist[targets == pad_id] = 0.0
    return dist


def label_smoothed_loss(
    logits: Tensor,
    targets: np.ndarray,
    epsilon: float,
    pad_id: int = 0,
    reduction: Literal["mean", "sum"] = "mean",
) -> Tensor:
    """
    Cross-entropy against label-smoothed targets.

    `mean` divides by the number of non-pad positions; `sum` leaves the
    normalisation to the caller (gradient accumulation over a character budget).
    """
    epsilon = check_probability(epsilon, "label smoothing")
    targets = np.asarray(targets)
    vocab_size = logits.shape[-1]
    if logits.shape[:-1] != targets.shape:
        raise DimensionError(f"logits {logits.shape} do not match targets {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab_size):
        raise DataError(f"target id outside [0, {vocab_size})")
    count = int(np.sum(targets != pad_id))
    if count == 0:
        raise DataError("every target position is padding")

    dist = Tensor(smoothed_targets(targets, vocab_size, epsilon, pad_id))
    total = ops.scale(ops.reduce_sum(ops.multiply(ops.log_softmax(logits), dist)), -1.0)
    if reduction == "sum":
        return total
    return ops.scale(total, 1.0 / count)


def char_dropout(
    target_ids: np.ndarray,
    p: float,
    mode: Union[Mode, str],
    rng: Optional[RngStream],
    pad_id: int = 0,
) -> np.ndarray:
    """
    Embedding keep-mask: in train mode each non-pad position is dropped
    (mask 0) with probability p. Eval mode keeps everything.
    """
    p = check_probability(p, "character dropout")
    target_ids = np.asarray(target_ids)
    keep = np.ones(target_ids.shape)
    if Mode(mode) is Mode.EVAL or p == 0.0:
        return keep
    if rng is None:
        raise ConfigError("train-mode character dropout needs an RngStream")
    dropped = rng.bernoulli(p, target_ids.shape) & (target_ids != pad_id)
    keep[dropped] = 0.0
    return keep
