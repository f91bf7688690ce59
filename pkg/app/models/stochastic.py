"""Stochastic residual connections: whole layers are skipped at train time with depth-scaled probability."""
from typing import Callable, List, Optional, Union

import numpy as np

from app.exceptions import ConfigError, DimensionError
from app.tensor import ops
from app.tensor.module import LayerNorm
from app.tensor.ops import Mode
from app.tensor.rng import RngStream
from app.tensor.tensor import Tensor


def layer_drop_schedule(l: int, L: int, p: float) -> float:
    """Drop probability of layer l (1-based) in a stack of L layers: (l/L)(1-p)."""
    if L < 1 or not 1 <= l <= L:
        raise ConfigError(f"layer index must satisfy 1 <= l <= L, got l={l}, L={L}")
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"global drop parameter p must be in [0, 1), got {p}")
    return (l / L) * (1.0 - p)


class StochasticPolicy:
    """Per-layer drop probabilities of one encoder or decoder stack."""

    def __init__(self, p: Optional[float], num_layers: int, schedule: str = "linear"):
        if num_layers < 1:
            raise ConfigError(f"a stack needs at least one layer, got {num_layers}")
        if schedule not in ("linear", "constant"):
            raise ConfigError(f"unknown layer-drop schedule '{schedule}'")
        self.p = p
        self.num_layers = num_layers
        self.schedule = schedule
        if p is None:
            self.probabilities = [0.0] * num_layers
        elif schedule == "constant":
            self.probabilities = [layer_drop_schedule(num_layers, num_layers, p)] * num_layers
        else:
            self.probabilities = [layer_drop_schedule(l, num_layers, p) for l in range(1, num_layers + 1)]
        if any(not 0.0 <= p_l < 1.0 for p_l in self.probabilities):
            raise ConfigError(f"layer drop probabilities must lie in [0, 1), got {self.probabilities}")

    @property
    def enabled(self) -> bool:
        return any(p_l > 0.0 for p_l in self.probabilities)

    def drop_probability(self, l: int) -> float:
        """p_l for the 1-based layer index l."""
        if not 1 <= l <= self.num_layers:
            raise ConfigError(f"layer index {l} outside 1..{self.num_layers}")
        return self.probabilities[l - 1]

    def draw_keep_masks(self, rng: Optional[RngStream]) -> List[bool]:
        """One Bernoulli(1 - p_l) outcome per layer; consumes no draws when nothing can drop."""
        if not self.enabled:
            return [True] * self.num_layers
        if rng is None:
            raise ConfigError("train-mode stochastic layers need an RngStream")
        keep_probs = 1.0 - np.asarray(self.probabilities)
        return [bool(k) for k in rng.bernoulli(keep_probs, (self.num_layers,))]


def draw_keep(p_l: float, rng: Optional[RngStream]) -> bool:
    if p_l == 0.0:
        return True
    if rng is None:
        raise ConfigError("train-mode stochastic residual needs an RngStream")
    return bool(rng.bernoulli(1.0 - p_l))


def stochastic_residual(
    x: Tensor,
    sublayer: Callable[[Tensor], Tensor],
    p_l: float,
    mode: Union[Mode, str],
    rng: Optional[RngStream] = None,
    keep: Optional[bool] = None,
    norm: Optional[LayerNorm] = None,
    identity_skip: bool = False,
) -> Tensor:
    """
    Train: norm(M * F(x) / (1 - p_l) + x) with M ~ Bernoulli(1 - p_l), or the given `keep`.
    Eval: norm(F(x) + x), no scaling.

    A skipped layer never evaluates F. It still passes x through `norm` unless
    `identity_skip` is set.
    """
    if not 0.0 <= p_l < 1.0:
        raise ConfigError(f"layer drop probability must be in [0, 1), got {p_l}")
    training = Mode(mode) is Mode.TRAIN
    if training:
        if keep is None:
            keep = draw_keep(p_l, rng)
        if not keep:
            if identity_skip or norm is None:
                return x
            return norm(x)

    out = sublayer(x)
    if out.shape != x.shape:
        raise DimensionError(f"sub-layer output {out.shape} differs from its input {x.shape}")
    if training and p_l > 0.0:
        out = ops.scale(out, 1.0 / (1.0 - p_l))
    out = out + x
    return norm(out) if norm is not None else out
