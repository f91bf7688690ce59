import math
from typing import Optional, Union

import numpy as np

from app.exceptions import ConfigError, DataError, DimensionError
from app.tensor import ops
from app.tensor.module import Linear, Module
from app.tensor.ops import Mode
from app.tensor.rng import RngStream
from app.tensor.tensor import Tensor


def causal_mask(length: int) -> np.ndarray:
    """Boolean [length, length] mask; True where query t may attend key t' <= t."""
    return np.tril(np.ones((length, length), dtype=bool))


def positional_encoding(length: int, width: int) -> Tensor:
    """
    Sinusoid table: even columns sin(t / 10000^(2i/width)), odd columns the matching cos.

    Rows depend only on their own position, so a longer table extends a shorter one.
    """
    if width % 2 != 0:
        raise ConfigError(f"positional encoding width must be even, got {width}")
    positions = np.arange(length, dtype=np.float64)[:, None]
    frequencies = np.exp(np.arange(0, width, 2, dtype=np.float64) * -(math.log(10000.0) / width))
    table = np.zeros((length, width))
    table[:, 0::2] = np.sin(positions * frequencies)
    table[:, 1::2] = np.cos(positions * frequencies)
    return Tensor(table)


def scaled_dot_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask: Optional[np.ndarray] = None,
    dropout_p: float = 0.0,
    mode: Union[Mode, str] = Mode.EVAL,
    rng: Optional[RngStream] = None,
) -> Tensor:
    """
    softmax(Q K^T / sqrt(width)) V over the key axis.

    `mask` is boolean and broadcastable to the score shape [.., T_q, T_k];
    True marks an attendable key. Masked scores become -inf before the softmax.
    """
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"queries {q.shape} and keys {k.shape} differ in width")
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"keys {k.shape} and values {v.shape} differ in length")
    if k.shape[-2] == 0:
        raise DataError("attention over an empty key sequence")

    scores = ops.scale(ops.matmul(q, ops.transpose_last_two(k)), 1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not np.broadcast_to(mask, scores.shape).any(axis=-1).all():
            raise DataError("attention mask leaves a query with no attendable position")
        scores = ops.masked_fill(scores, ~mask, -np.inf)
    weights = ops.dropout(ops.softmax(scores), dropout_p, mode, rng)
    return ops.matmul(weights, v)


class MultiHeadAttention(Module):
    """Per-head projections of queries, keys and values; heads are concatenated and re-projected."""

    def __init__(self, d_model: int, num_heads: int, rng: RngStream, dropout: float = 0.0):
        if d_model % num_heads != 0:
            raise ConfigError(f"d_model {d_model} is not divisible by {num_heads} heads")
        self.query = Linear(d_model, d_model, rng.spawn("query"))
        self.key = Linear(d_model, d_model, rng.spawn("key"))
        self.value = Linear(d_model, d_model, rng.spawn("value"))
        self.output = Linear(d_model, d_model, rng.spawn("output"))
        self.num_heads = num_heads
        self.d_model = d_model
        self.dropout = dropout

    def _split_heads(self, x: Tensor) -> Tensor:
        batch, length, _ = x.shape
        x = ops.reshape(x, (batch, length, self.num_heads, self.d_model // self.num_heads))
        return ops.permute(x, (0, 2, 1, 3))

    def forward(
        self,
        x_q: Tensor,
        x_kv: Tensor,
        mask: Optional[np.ndarray] = None,
        mode: Union[Mode, str] = Mode.EVAL,
        rng: Optional[RngStream] = None,
    ) -> Tensor:
        if x_q.shape[-1] != self.d_model or x_kv.shape[-1] != self.d_model:
            raise DimensionError(
                f"attention width is {self.d_model}, got queries {x_q.shape} and keys {x_kv.shape}"
            )
        unbatched = x_q.ndim == 2
        if unbatched:
            x_q = ops.reshape(x_q, (1,) + x_q.shape)
        if x_kv.ndim == 2:
            x_kv = ops.reshape(x_kv, (1,) + x_kv.shape)

        q = self._split_heads(self.query(x_q))
        k = self._split_heads(self.key(x_kv))
        v = self._split_heads(self.value(x_kv))
        context = scaled_dot_attention(q, k, v, mask, self.dropout, mode, rng)

        # [B, n, T, d/n] -> [B, T, n * d/n]: the heads side by side
        batch, _, length, _ = context.shape
        merged = ops.reshape(ops.permute(context, (0, 2, 1, 3)), (batch, length, self.d_model))
        out = self.output(merged)
        if unbatched:
            out = ops.reshape(out, out.shape[1:])
        return out
