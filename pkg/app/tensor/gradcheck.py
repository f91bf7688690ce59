from typing import Callable, Dict, Sequence, Tuple

import numpy as np

from app.tensor.tensor import Tensor, no_grad


def numerical_gradient(loss_fn: Callable[[], Tensor], tensor: Tensor, step: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar loss with respect to every element of `tensor`."""
    tensor.data = np.array(tensor.data, copy=True, order="C")
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            upper = loss_fn().item()
            flat[i] = original - step
            lower = loss_fn().item()
            flat[i] = original
            grad.reshape(-1)[i] = (upper - lower) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric)), initial=0.0))


def check_gradients(
    loss_fn: Callable[[], Tensor],
    tensors: Sequence[Tuple[str, Tensor]],
    step: float = 1e-6,
) -> Dict[str, float]:
    """
    Compare autodiff gradients against central differences.

    `loss_fn` must rebuild the graph deterministically on every call (re-seed
    any RngStream inside it). Returns the worst relative error per tensor.
    """
    for _, t in tensors:
        t.zero_grad()
    loss_fn().backward()
    errors = {}
    for name, t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        errors[name] = relative_error(analytic, numerical_gradient(loss_fn, t, step))
    return errors
