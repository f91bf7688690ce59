import math
from typing import Dict, Iterator, List, Tuple

import numpy as np

from app.exceptions import DimensionError
from app.tensor import ops
from app.tensor.rng import RngStream
from app.tensor.tensor import Tensor


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data: np.ndarray, name: str = None):
        super().__init__(data, requires_grad=True, name=name)


class Module:
    """Container that discovers parameters and sub-modules from its attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for index, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{index}.")

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise DimensionError(f"parameter names differ: missing={missing}, unexpected={unexpected}")
        for name, param in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != param.shape:
                raise DimensionError(f"{name}: expected shape {param.shape}, got {value.shape}")
            param.data = value.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def uniform_init(rng: RngStream, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return (rng.uniform(shape) * 2.0 - 1.0) * bound


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: RngStream):
        self.weight = Parameter(uniform_init(rng, (in_features, out_features), in_features))
        self.bias = Parameter(np.zeros(out_features))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise DimensionError(f"Linear expects width {self.weight.shape[0]}, got input {x.shape}")
        return ops.matmul(x, self.weight) + self.bias


class LayerNorm(Module):
    def __init__(self, width: int, eps: float = ops.LAYER_NORM_EPS):
        self.gain = Parameter(np.ones(width))
        self.bias = Parameter(np.zeros(width))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, self.eps)


class Embedding(Module):
    def __init__(self, num_embeddings: int, width: int, rng: RngStream):
        self.weight = Parameter(uniform_init(rng, (num_embeddings, width), width))

    def forward(self, ids: np.ndarray) -> Tensor:
        return ops.embedding_lookup(self.weight, ids)
