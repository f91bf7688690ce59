import contextvars
import itertools
from contextlib import contextmanager
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.exceptions import DimensionError, NumericalError, UsageError

DTYPE = np.float64

_grad_enabled: contextvars.ContextVar = contextvars.ContextVar("grad_enabled", default=True)
_op_sequence = itertools.count()

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence[Any]]


@contextmanager
def no_grad() -> Iterator[None]:
    """Run the enclosed forward computation without recording a graph."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


class Function:
    """
    Base class for differentiable operations.

    Subclasses implement `forward` on raw arrays and `backward`, which maps the
    gradient of the output to one gradient (or None) per input tensor.
    """

    # Ops that legitimately emit -inf (masking) opt out of the finiteness check.
    allow_infinite = False

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs
        self.needs_grad = tuple(t.requires_grad for t in inputs)
        self.sequence = next(_op_sequence)

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward pass")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError(f"{type(self).__name__} has no backward pass")

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        fn = cls(*inputs)
        out = fn.forward(*(t.data for t in inputs), **kwargs)
        if cls.allow_infinite:
            if np.isnan(out).any():
                raise NumericalError(f"{cls.__name__} produced NaN values")
        elif not np.isfinite(out).all():
            raise NumericalError(f"{cls.__name__} produced non-finite values")
        track = is_grad_enabled() and any(fn.needs_grad)
        return Tensor(out, requires_grad=track, _creator=fn if track else None)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out the axes numpy broadcasting added or stretched."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, extent in enumerate(shape):
            if extent == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Graph:
    """The executed ops an output depends on, kept in execution order."""

    def __init__(self, ops: List[Function]):
        self.ops = ops

    @classmethod
    def trace(cls, output: "Tensor") -> "Graph":
        seen: Dict[int, Function] = {}
        stack = [output._creator] if output._creator is not None else []
        while stack:
            fn = stack.pop()
            if id(fn) in seen:
                continue
            seen[id(fn)] = fn
            for inp in fn.inputs:
                if inp._creator is not None and id(inp._creator) not in seen:
                    stack.append(inp._creator)
        return cls(sorted(seen.values(), key=lambda fn: fn.sequence))

    def __len__(self) -> int:
        return len(self.ops)

    def backward(self, output: "Tensor", seed: np.ndarray) -> None:
        if output._creator is None:
            output._accumulate(seed)
            return
        pending: Dict[int, np.ndarray] = {id(output._creator): seed}
        for fn in reversed(self.ops):
            grad = pending.pop(id(fn), None)
            if grad is None:
                continue
            input_grads = fn.backward(grad)
            for inp, needed, g in zip(fn.inputs, fn.needs_grad, input_grads):
                if not needed or g is None:
                    continue
                if inp._creator is None:
                    inp._accumulate(g)
                else:
                    key = id(inp._creator)
                    pending[key] = pending[key] + g if key in pending else g


class Tensor:
    """Dense float64 array that records the ops applied to it for reverse-mode autodiff."""

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _creator: Optional[Function] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, np.ndarray) and data.dtype == DTYPE:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._creator = _creator

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._creator is None

    def __repr__(self) -> str:
        req = ", requires_grad=True" if self.requires_grad else ""
        nm = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{req}{nm})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, grad: np.ndarray) -> None:
        if grad.shape != self.data.shape:
            raise DimensionError(
                f"gradient shape {grad.shape} does not match tensor shape {self.data.shape}"
            )
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every leaf that requires grad."""
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise UsageError("backward() called on a tensor that does not depend on any parameter")
        Graph.trace(self).backward(self, np.ones_like(self.data))

    # --- operators, see app.tensor.ops ---
    def __add__(self, other: ArrayLike) -> "Tensor":
        return ops.add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return ops.add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return ops.subtract(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return ops.subtract(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.multiply(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return self.__mul__(other)

    def __truediv__(self, other: Union[int, float]) -> "Tensor":
        if not isinstance(other, (int, float)):
            raise UsageError("tensors can only be divided by a Python scalar")
        return ops.scale(self, 1.0 / other)

    def __neg__(self) -> "Tensor":
        return ops.scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return ops.matmul(self, other)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def permute(self, *axes: int) -> "Tensor":
        return ops.permute(self, axes)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return ops.reduce_sum(self, axis=axis, keepdims=keepdims)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


from app.tensor import ops  # noqa: E402
