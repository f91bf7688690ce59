from typing import List, Optional, Tuple, Union

import numpy as np

from app.exceptions import ConfigError, DataError, DimensionError
from app.models.attention import positional_encoding
from app.models.layers import DecoderLayer, EncoderLayer
from app.models.stochastic import StochasticPolicy
from app.schemas.config import ModelConfig
from app.services.losses import char_dropout
from app.services.vocab import Vocab
from app.tensor import ops
from app.tensor.module import Embedding, Linear, Module, Parameter
from app.tensor.ops import Mode
from app.tensor.rng import RngStream
from app.tensor.tensor import Tensor, as_tensor, no_grad


def stack_frames(features: Tensor, factor: int) -> Tensor:
    """
    Concatenate each run of `factor` consecutive frames into one step.

    [.., T, mel] -> [.., ceil(T/factor), factor*mel]; the last group is zero-padded.
    """
    if factor < 1:
        raise ConfigError(f"stack factor must be >= 1, got {factor}")
    features = as_tensor(features)
    if features.ndim < 2 or features.shape[-2] < 1:
        raise DataError(f"cannot stack frames of an empty feature matrix {features.shape}")
    if factor == 1:
        return features
    pad = -features.shape[-2] % factor
    if pad:
        zeros = Tensor(np.zeros(features.shape[:-2] + (pad, features.shape[-1])))
        features = ops.concat([features, zeros], axis=-2)
    return ops.concat_last_axis([ops.select_steps(features, j, factor) for j in range(factor)])


def stacked_lengths(frame_lengths: np.ndarray, factor: int) -> np.ndarray:
    return -(-np.asarray(frame_lengths) // factor)


class ForwardStreams:
    """Independent random streams for the stochastic sites of one training forward pass."""

    def __init__(self, rng: RngStream):
        self.dropout = rng.spawn("dropout")
        self.layers = rng.spawn("layers")
        self.characters = rng.spawn("characters")


class TransformerModel(Module):
    """Frame-stacking acoustic encoder and character decoder built from stochastic Transformer layers."""

    def __init__(self, config: ModelConfig, rng: RngStream):
        self.config = config
        d = config.d_model
        self.input_projection = Linear(config.stack_factor * config.mel_bins, d, rng.spawn("input_projection"))
        self.encoder_layers = [
            EncoderLayer(d, config.d_ff, config.num_heads, config.dropout, rng.spawn(f"encoder.{i}"))
            for i in range(config.enc_layers)
        ]
        self.embedding = Embedding(config.vocab_size, d, rng.spawn("embedding"))
        self.decoder_layers = [
            DecoderLayer(d, config.d_ff, config.num_heads, config.dropout, rng.spawn(f"decoder.{i}"))
            for i in range(config.dec_layers)
        ]
        if config.tie_embeddings:
            self.output_bias = Parameter(np.zeros(config.vocab_size))
        else:
            self.output_projection = Linear(d, config.vocab_size, rng.spawn("output_projection"))
        # One policy per stack: L is the depth of that stack
        self.encoder_policy = StochasticPolicy(config.stochastic_p, config.enc_layers, config.stochastic_schedule)
        self.decoder_policy = StochasticPolicy(config.stochastic_p, config.dec_layers, config.stochastic_schedule)

    @staticmethod
    def _streams(mode: Mode, rng: Optional[RngStream]) -> Optional[ForwardStreams]:
        if mode is Mode.EVAL:
            return None
        if rng is None:
            raise ConfigError("a train-mode forward pass needs an RngStream")
        return ForwardStreams(rng)

    def _encode(
        self,
        features: Tensor,
        frame_lengths: Optional[np.ndarray],
        mode: Mode,
        streams: Optional[ForwardStreams],
    ) -> Tuple[Tensor, np.ndarray]:
        cfg = self.config
        batch, length, bins = features.shape
        if bins != cfg.mel_bins:
            raise DimensionError(f"expected {cfg.mel_bins} mel bins, got features {features.shape}")
        if length < 1:
            raise DataError("cannot encode an empty feature sequence")
        lengths = np.full(batch, length) if frame_lengths is None else np.asarray(frame_lengths)
        if lengths.shape != (batch,) or lengths.min() < 1 or lengths.max() > length:
            raise DataError(f"frame lengths {lengths.tolist()} do not fit features {features.shape}")

        x = stack_frames(features, cfg.stack_factor)
        steps = x.shape[-2]
        memory_mask = np.arange(steps)[None, :] < stacked_lengths(lengths, cfg.stack_factor)[:, None]

        # projection before the positional encoding is added
        x = self.input_projection(x) + positional_encoding(steps, cfg.d_model)
        dropout_rng = streams.dropout if streams else None
        x = ops.dropout(x, cfg.dropout, mode, dropout_rng)

        attention_mask = memory_mask[:, None, None, :]
        keeps = self._keeps(self.encoder_policy, mode, streams)
        for l, layer in enumerate(self.encoder_layers, start=1):
            x = layer(
                x, attention_mask, self.encoder_policy.drop_probability(l), mode,
                dropout_rng, keeps[l - 1], cfg.identity_skip,
            )
        return x, memory_mask

    @staticmethod
    def _keeps(policy: StochasticPolicy, mode: Mode, streams: Optional[ForwardStreams]) -> List[Optional[bool]]:
        if mode is Mode.EVAL:
            return [None] * policy.num_layers
        return policy.draw_keep_masks(streams.layers)

    def _decode(
        self,
        decoder_inputs: np.ndarray,
        memory: Tensor,
        memory_mask: np.ndarray,
        mode: Mode,
        streams: Optional[ForwardStreams],
        char_dropout_p: float = 0.0,
    ) -> Tensor:
        cfg = self.config
        ids = np.asarray(decoder_inputs)
        if ids.ndim != 2 or ids.shape[1] < 1:
            raise DataError(f"decoder inputs must be a non-empty [batch, length] id matrix, got {ids.shape}")
        if not np.issubdtype(ids.dtype, np.integer) or ids.min() < 0 or ids.max() >= cfg.vocab_size:
            raise DataError(f"unknown character id in decoder inputs (vocabulary size {cfg.vocab_size})")
        if memory.shape[-2] == 0:
            raise DataError("cannot decode against an empty encoder memory")

        y = self.embedding(ids)
        if mode is Mode.TRAIN and char_dropout_p > 0.0:
            keep = char_dropout(ids, char_dropout_p, mode, streams.characters, Vocab.pad_id)
            y = ops.multiply(y, Tensor(keep[..., None]))
        y = y + positional_encoding(ids.shape[1], cfg.d_model)
        dropout_rng = streams.dropout if streams else None
        y = ops.dropout(y, cfg.dropout, mode, dropout_rng)

        target_mask = (ids != Vocab.pad_id)[:, None, None, :]
        cross_mask = memory_mask[:, None, None, :]
        keeps = self._keeps(self.decoder_policy, mode, streams)
        for l, layer in enumerate(self.decoder_layers, start=1):
            y = layer(
                y, memory, target_mask, cross_mask, self.decoder_policy.drop_probability(l), mode,
                dropout_rng, keeps[l - 1], cfg.identity_skip,
            )
        if cfg.tie_embeddings:
            return ops.matmul(y, ops.transpose_last_two(self.embedding.weight)) + self.output_bias
        return self.output_projection(y)

    def encode(
        self,
        features: Union[Tensor, np.ndarray],
        frame_lengths: Optional[np.ndarray] = None,
        mode: Union[Mode, str] = Mode.EVAL,
        rng: Optional[RngStream] = None,
    ) -> Tuple[Tensor, np.ndarray]:
        """
        Features [T, mel] or [B, T, mel] -> (memory [.., T', d], boolean mask of real steps).
        """
        mode = Mode(mode)
        features = as_tensor(features)
        unbatched = features.ndim == 2
        if unbatched:
            features = ops.reshape(features, (1,) + features.shape)
        memory, mask = self._encode(features, frame_lengths, mode, self._streams(mode, rng))
        if unbatched:
            return ops.reshape(memory, memory.shape[1:]), mask[0]
        return memory, mask

    def forward_teacher_forcing(
        self,
        features: Union[Tensor, np.ndarray],
        decoder_inputs: np.ndarray,
        frame_lengths: Optional[np.ndarray] = None,
        mode: Union[Mode, str] = Mode.EVAL,
        rng: Optional[RngStream] = None,
        char_dropout_p: float = 0.0,
    ) -> Tensor:
        """
        Logits [.., U, vocab] for gold decoder inputs that start with <s>.

        Accepts one utterance ([T, mel] features, [U] ids) or a padded batch.
        """
        mode = Mode(mode)
        features = as_tensor(features)
        ids = np.asarray(decoder_inputs)
        unbatched = features.ndim == 2
        if unbatched:
            features = ops.reshape(features, (1,) + features.shape)
            ids = ids[None, :]
        if ids.ndim != 2 or ids.shape[1] < 1 or np.any(ids[:, 0] != Vocab.bos_id):
            raise DataError("decoder inputs must begin with the <s> symbol")
        streams = self._streams(mode, rng)
        memory, memory_mask = self._encode(features, frame_lengths, mode, streams)
        logits = self._decode(ids, memory, memory_mask, mode, streams, char_dropout_p)
        if unbatched:
            return ops.reshape(logits, logits.shape[1:])
        return logits

    def next_token_log_probs(self, prefixes: np.ndarray, memory: Tensor, memory_mask: np.ndarray) -> np.ndarray:
        """Eval-mode log-distribution over the next character for each prefix row [B, U] -> [B, vocab]."""
        if memory.ndim == 2:
            memory = ops.reshape(memory, (1,) + memory.shape)
            memory_mask = np.asarray(memory_mask)[None, :]
        with no_grad():
            logits = self._decode(np.asarray(prefixes), memory, memory_mask, Mode.EVAL, None)
            return ops.log_softmax(Tensor(logits.data[:, -1, :])).data


def encoder_layer_parameters(config: ModelConfig) -> int:
    d, d_ff = config.d_model, config.d_ff
    attention = 4 * (d * d + d)
    feed_forward = d * d_ff + d_ff + d_ff * d + d
    return attention + feed_forward + 2 * (2 * d)


def decoder_layer_parameters(config: ModelConfig) -> int:
    d, d_ff = config.d_model, config.d_ff
    attention = 4 * (d * d + d)
    feed_forward = d * d_ff + d_ff + d_ff * d + d
    return 2 * attention + feed_forward + 3 * (2 * d)


def count_parameters(config: ModelConfig) -> int:
    """Exact number of scalar parameters in `TransformerModel(config)`; stochastic layers add none."""
    d, vocab = config.d_model, config.vocab_size
    input_projection = config.stack_factor * config.mel_bins * d + d
    output = vocab if config.tie_embeddings else d * vocab + vocab
    return (
        input_projection
        + config.enc_layers * encoder_layer_parameters(config)
        + vocab * d
        + config.dec_layers * decoder_layer_parameters(config)
        + output
    )
