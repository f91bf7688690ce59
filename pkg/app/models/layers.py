from typing import Optional, Union

import numpy as np

from app.models.attention import MultiHeadAttention, causal_mask
from app.models.stochastic import draw_keep, stochastic_residual
from app.tensor import ops
from app.tensor.module import LayerNorm, Linear, Module
from app.tensor.ops import Mode
from app.tensor.rng import RngStream
from app.tensor.tensor import Tensor


class FeedForward(Module):
    """d -> d_ff -> d with a ReLU hidden layer."""

    def __init__(self, d_model: int, d_ff: int, rng: RngStream):
        self.hidden = Linear(d_model, d_ff, rng.spawn("hidden"))
        self.projection = Linear(d_ff, d_model, rng.spawn("projection"))

    def forward(self, x: Tensor) -> Tensor:
        return self.projection(ops.relu(self.hidden(x)))


class EncoderLayer(Module):
    """Self-attention then feed-forward, each inside a stochastic residual sharing one layer mask."""

    def __init__(self, d_model: int, d_ff: int, num_heads: int, dropout: float, rng: RngStream):
        self.self_attention = MultiHeadAttention(d_model, num_heads, rng.spawn("self_attention"), dropout)
        self.self_attention_norm = LayerNorm(d_model)
        self.feed_forward = FeedForward(d_model, d_ff, rng.spawn("feed_forward"))
        self.feed_forward_norm = LayerNorm(d_model)
        self.dropout = dropout

    def forward(
        self,
        x: Tensor,
        pad_mask: Optional[np.ndarray],
        p_l: float = 0.0,
        mode: Union[Mode, str] = Mode.EVAL,
        rng: Optional[RngStream] = None,
        keep: Optional[bool] = None,
        identity_skip: bool = False,
    ) -> Tensor:
        mode = Mode(mode)
        if mode is Mode.TRAIN and keep is None:
            keep = draw_keep(p_l, rng)

        def attend(h: Tensor) -> Tensor:
            out = self.self_attention(h, h, pad_mask, mode, rng)
            return ops.dropout(out, self.dropout, mode, rng)

        def transform(h: Tensor) -> Tensor:
            return ops.dropout(self.feed_forward(h), self.dropout, mode, rng)

        x = stochastic_residual(x, attend, p_l, mode, rng, keep, self.self_attention_norm, identity_skip)
        return stochastic_residual(x, transform, p_l, mode, rng, keep, self.feed_forward_norm, identity_skip)


class DecoderLayer(Module):
    """Causal self-attention, encoder-decoder attention and feed-forward under one shared layer mask."""

    def __init__(self, d_model: int, d_ff: int, num_heads: int, dropout: float, rng: RngStream):
        self.self_attention = MultiHeadAttention(d_model, num_heads, rng.spawn("self_attention"), dropout)
        self.self_attention_norm = LayerNorm(d_model)
        self.cross_attention = MultiHeadAttention(d_model, num_heads, rng.spawn("cross_attention"), dropout)
        self.cross_attention_norm = LayerNorm(d_model)
        self.feed_forward = FeedForward(d_model, d_ff, rng.spawn("feed_forward"))
        self.feed_forward_norm = LayerNorm(d_model)
        self.dropout = dropout

    def forward(
        self,
        y: Tensor,
        memory: Tensor,
        target_mask: Optional[np.ndarray],
        memory_mask: Optional[np.ndarray],
        p_l: float = 0.0,
        mode: Union[Mode, str] = Mode.EVAL,
        rng: Optional[RngStream] = None,
        keep: Optional[bool] = None,
        identity_skip: bool = False,
    ) -> Tensor:
        """`target_mask` marks real target keys; the causal mask is always added on top."""
        mode = Mode(mode)
        self_mask = causal_mask(y.shape[-2])
        if target_mask is not None:
            self_mask = self_mask & target_mask
        if mode is Mode.TRAIN and keep is None:
            keep = draw_keep(p_l, rng)

        def attend_self(h: Tensor) -> Tensor:
            out = self.self_attention(h, h, self_mask, mode, rng)
            return ops.dropout(out, self.dropout, mode, rng)

        def attend_memory(h: Tensor) -> Tensor:
            out = self.cross_attention(h, memory, memory_mask, mode, rng)
            return ops.dropout(out, self.dropout, mode, rng)

        def transform(h: Tensor) -> Tensor:
            return ops.dropout(self.feed_forward(h), self.dropout, mode, rng)

        y = stochastic_residual(y, attend_self, p_l, mode, rng, keep, self.self_attention_norm, identity_skip)
        y = stochastic_residual(y, attend_memory, p_l, mode, rng, keep, self.cross_attention_norm, identity_skip)
        return stochastic_residual(y, transform, p_l, mode, rng, keep, self.feed_forward_norm, identity_skip)
