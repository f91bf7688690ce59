import math
from typing import List, Optional, Sequence

import numpy as np

from app.exceptions import ConfigError, NumericalError, UsageError
from app.tensor.module import Parameter


def noam_lr(step: int, init_lr: float, d_model: int, warmup: int) -> float:
    """init_lr * d^-0.5 * min(step^-0.5, step * warmup^-1.5); peaks at step == warmup."""
    if step < 1:
        raise UsageError(f"learning-rate schedule starts at step 1, got {step}")
    if warmup < 1 or d_model < 1 or init_lr <= 0:
        raise ConfigError("noam schedule needs init_lr > 0, d_model >= 1 and warmup >= 1")
    return init_lr * d_model ** -0.5 * min(step ** -0.5, step * warmup ** -1.5)


class NoamSchedule:
    def __init__(self, init_lr: float, d_model: int, warmup: int, step: int = 0):
        self.init_lr = init_lr
        self.d_model = d_model
        self.warmup = warmup
        self.step = step

    def current(self) -> float:
        return noam_lr(self.step, self.init_lr, self.d_model, self.warmup)

    def peek(self) -> float:
        """Learning rate the next update will use."""
        return noam_lr(self.step + 1, self.init_lr, self.d_model, self.warmup)

    def advance(self) -> float:
        self.step += 1
        return self.current()


class AdamState:
    """First and second moment buffers, zero-initialised and shaped like the parameters."""

    def __init__(
        self,
        params: Sequence[Parameter],
        beta1: float = 0.9,
        beta2: float = 0.98,
        eps: float = 1e-9,
    ):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.first_moment: List[np.ndarray] = [np.zeros_like(p.data) for p in params]
        self.second_moment: List[np.ndarray] = [np.zeros_like(p.data) for p in params]


def adam_step(
    params: Sequence[Parameter],
    grads: Sequence[Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    names: Optional[Sequence[str]] = None,
) -> None:
    """
    One bias-corrected Adam update in place. A missing gradient counts as zero.

    The whole step is rejected before anything is modified if any gradient is not finite.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise UsageError("parameters, gradients and optimizer state are not aligned")
    dense = [np.zeros_like(p.data) if g is None else g for p, g in zip(params, grads)]
    for index, grad in enumerate(dense):
        if not np.all(np.isfinite(grad)):
            name = names[index] if names else f"#{index}"
            raise NumericalError(f"non-finite gradient for parameter {name}; update aborted")

    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for param, grad, m, v in zip(params, dense, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        param.data = param.data - lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


def clip_grad_norm(grads: Sequence[Optional[np.ndarray]], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most max_norm; returns the norm before clipping."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None))
    if total > max_norm:
        factor = max_norm / (total + 1e-12)
        for g in grads:
            if g is not None:
                g *= factor
    return total

