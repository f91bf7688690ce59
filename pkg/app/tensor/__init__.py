from app.tensor.tensor import DTYPE, Function, Graph, Tensor, as_tensor, is_grad_enabled, no_grad
from app.tensor.rng import RngStream
from app.tensor.ops import Mode
from app.tensor.module import Embedding, LayerNorm, Linear, Module, Parameter

__all__ = [
    "DTYPE",
    "Embedding",
    "Function",
    "Graph",
    "LayerNorm",
    "Linear",
    "Mode",
    "Module",
    "Parameter",
    "RngStream",
    "Tensor",
    "as_tensor",
    "is_grad_enabled",
    "no_grad",
]
