"""Differentiable kernels. Every op has an exact forward and an adjoint checked by finite differences."""
from enum import Enum
from typing import Any, Optional, Sequence, Tuple, Union

import numpy as np

from app.exceptions import ConfigError, DataError, DimensionError
from app.tensor.rng import RngStream
from app.tensor.tensor import Function, Tensor, as_tensor

LAYER_NORM_EPS = 1e-5


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


# --- elementwise ---------------------------------------------------------

class Add(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x + y

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        x, y = self.inputs
        return (
            self.unbroadcast(grad, x.shape) if self.needs_grad[0] else None,
            self.unbroadcast(grad, y.shape) if self.needs_grad[1] else None,
        )


class Subtract(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x - y

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        x, y = self.inputs
        return (
            self.unbroadcast(grad, x.shape) if self.needs_grad[0] else None,
            self.unbroadcast(-grad, y.shape) if self.needs_grad[1] else None,
        )


class Multiply(Function):
    def forward(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return x * y

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        x, y = self.inputs
        return (
            self.unbroadcast(grad * y.data, x.shape) if self.needs_grad[0] else None,
            self.unbroadcast(grad * x.data, y.shape) if self.needs_grad[1] else None,
        )


class Scale(Function):
    def forward(self, x: np.ndarray, factor: float) -> np.ndarray:
        self.factor = factor
        return x * factor

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * self.factor,)


class ReLU(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        self.active = x > 0
        return np.where(self.active, x, 0.0)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad * self.active,)


class MaskedFill(Function):
    allow_infinite = True

    def forward(self, x: np.ndarray, mask: np.ndarray, value: float) -> np.ndarray:
        self.mask = mask
        return np.where(mask, value, x)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (np.where(self.mask, 0.0, grad),)


# --- linear algebra and shape --------------------------------------------

class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.matmul(a, b)

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        a, b = self.inputs
        grad_a = grad_b = None
        if self.needs_grad[0]:
            grad_a = self.unbroadcast(np.matmul(grad, np.swapaxes(b.data, -1, -2)), a.shape)
        if self.needs_grad[1]:
            grad_b = self.unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), grad), b.shape)
        return grad_a, grad_b


class Reshape(Function):
    def forward(self, x: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        return x.reshape(shape)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad.reshape(self.inputs[0].shape),)


class Permute(Function):
    def forward(self, x: np.ndarray, axes: Tuple[int, ...]) -> np.ndarray:
        self.inverse = tuple(np.argsort(axes))
        return np.transpose(x, axes)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (np.transpose(grad, self.inverse),)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int) -> np.ndarray:
        self.axis = axis
        self.splits = np.cumsum([a.shape[axis] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.split(grad, self.splits, axis=self.axis))


class SelectSteps(Function):
    """Every `step`-th slice along axis -2, starting at `start`."""

    def forward(self, x: np.ndarray, start: int, step: int) -> np.ndarray:
        self.index = (Ellipsis, slice(start, None, step), slice(None))
        return x[self.index]

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros(self.inputs[0].shape)
        full[self.index] = grad
        return (full,)


class EmbeddingLookup(Function):
    def forward(self, weight: np.ndarray, ids: np.ndarray) -> np.ndarray:
        self.ids = ids
        return weight[ids]

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        weight = self.inputs[0]
        full = np.zeros(weight.shape)
        np.add.at(full, self.ids.reshape(-1), grad.reshape(-1, weight.shape[-1]))
        return (full,)


class Sum(Function):
    def forward(self, x: np.ndarray, axis: Optional[int], keepdims: bool) -> np.ndarray:
        self.axis = axis
        self.keepdims = keepdims
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        shape = self.inputs[0].shape
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, shape).copy(),)


# --- normalisation -------------------------------------------------------

class Softmax(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        shifted = np.exp(x - np.max(x, axis=-1, keepdims=True))
        self.out = shifted / np.sum(shifted, axis=-1, keepdims=True)
        return self.out

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        y = self.out
        return (y * (grad - np.sum(grad * y, axis=-1, keepdims=True)),)


class LogSoftmax(Function):
    def forward(self, x: np.ndarray) -> np.ndarray:
        shifted = x - np.max(x, axis=-1, keepdims=True)
        out = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
        self.probs = np.exp(out)
        return out

    def backward(self, grad: np.ndarray) -> Tuple[np.ndarray]:
        return (grad - self.probs * np.sum(grad, axis=-1, keepdims=True),)


class LayerNorm(Function):
    def forward(self, x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float) -> np.ndarray:
        mean = np.mean(x, axis=-1, keepdims=True)
        var = np.var(x, axis=-1, keepdims=True)
        self.inv_std = 1.0 / np.sqrt(var + eps)
        self.normed = (x - mean) * self.inv_std
        return self.normed * gain + bias

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        _, gain, bias = self.inputs
        lead = tuple(range(grad.ndim - 1))
        grad_x = grad_gain = grad_bias = None
        if self.needs_grad[0]:
            g = grad * gain.data
            width = g.shape[-1]
            grad_x = self.inv_std / width * (
                width * g
                - np.sum(g, axis=-1, keepdims=True)
                - self.normed * np.sum(g * self.normed, axis=-1, keepdims=True)
            )
        if self.needs_grad[1]:
            grad_gain = np.sum(grad * self.normed, axis=lead)
        if self.needs_grad[2]:
            grad_bias = np.sum(grad, axis=lead)
        return grad_x, grad_gain, grad_bias


# --- public functional API -------------------------------------------------

def add(x: Any, y: Any) -> Tensor:
    return Add.apply(as_tensor(x), as_tensor(y))


def subtract(x: Any, y: Any) -> Tensor:
    return Subtract.apply(as_tensor(x), as_tensor(y))


def multiply(x: Any, y: Any) -> Tensor:
    return Multiply.apply(as_tensor(x), as_tensor(y))


def scale(x: Tensor, factor: float) -> Tensor:
    return Scale.apply(x, factor=float(factor))


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over [.., m, k] x [.., k, n] with broadcast leading axes."""
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch extents do not broadcast: {a.shape} x {b.shape}") from None
    return MatMul.apply(a, b)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if -1 not in shape and int(np.prod(shape)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} into {shape}")
    return Reshape.apply(x, shape=shape)


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(a) for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"invalid permutation {axes} for shape {x.shape}")
    return Permute.apply(x, axes=axes)


def transpose_last_two(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise DimensionError(f"transpose_last_two needs rank >= 2, got {x.shape}")
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return Permute.apply(x, axes=tuple(axes))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    first = tensors[0].shape
    ax = axis % len(first)
    for t in tensors[1:]:
        if len(t.shape) != len(first) or any(
            a != b for i, (a, b) in enumerate(zip(t.shape, first)) if i != ax
        ):
            raise DimensionError(f"cannot concatenate {t.shape} with {first} along axis {axis}")
    return Concat.apply(*tensors, axis=axis)


def concat_last_axis(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=-1)


def select_steps(x: Tensor, start: int, step: int) -> Tensor:
    if x.ndim < 2:
        raise DimensionError(f"select_steps needs rank >= 2, got {x.shape}")
    return SelectSteps.apply(x, start=start, step=step)


def embedding_lookup(weight: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DataError(f"embedding ids must be integers, got dtype {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise DataError(f"embedding id out of range [0, {weight.shape[0]})")
    return EmbeddingLookup.apply(weight, ids=ids)


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    mask = np.asarray(mask, dtype=bool)
    try:
        shape = np.broadcast_shapes(mask.shape, x.shape)
    except ValueError:
        raise DimensionError(f"mask {mask.shape} does not broadcast to {x.shape}") from None
    if shape != x.shape:
        raise DimensionError(f"mask {mask.shape} would enlarge tensor {x.shape}")
    return MaskedFill.apply(x, mask=mask, value=value)


def reduce_sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    return Softmax.apply(x)


def log_softmax(x: Tensor) -> Tensor:
    return LogSoftmax.apply(x)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    width = x.shape[-1]
    if gain.shape != (width,) or bias.shape != (width,):
        raise DimensionError(
            f"layer_norm gain {gain.shape} / bias {bias.shape} do not match width {width}"
        )
    return LayerNorm.apply(x, gain, bias, eps=eps)


def check_probability(p: float, name: str = "p") -> float:
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"{name} must be in [0, 1), got {p}")
    return float(p)


def dropout(x: Tensor, p: float, mode: Union[Mode, str], rng: Optional[RngStream]) -> Tensor:
    """Inverted dropout: survivors are scaled by 1/(1-p) in train mode, identity in eval mode."""
    p = check_probability(p, "dropout probability")
    if Mode(mode) is Mode.EVAL or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("train-mode dropout needs an RngStream")
    keep = rng.bernoulli(1.0 - p, x.shape)
    return Multiply.apply(x, Tensor(keep / (1.0 - p)))
