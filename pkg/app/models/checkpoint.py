"""
Versioned checkpoint container.

Layout (all integers little-endian):
    magic b"ASRCKPT\\0" | u32 version | u32 header length | UTF-8 JSON header | u32 tensor count
    per tensor: u32 name length | UTF-8 name | u32 ndim | u64 dims... | float64 payload (row-major)

The JSON header holds the model config, the vocabulary characters and free-form metadata.
"""
import json
import os
import struct
from pathlib import Path
from typing import Any, BinaryIO, Dict, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from app.exceptions import ConfigError, DataError
from app.models.transformer import TransformerModel
from app.schemas.config import ModelConfig
from app.services.vocab import Vocab
from app.tensor.rng import RngStream
from app.utils.logger import setup_logger

logger = setup_logger()

MAGIC = b"ASRCKPT\0"
VERSION = 1


class Checkpoint:
    """Decoded checkpoint contents."""

    def __init__(
        self,
        config: ModelConfig,
        vocab: Vocab,
        state: Dict[str, np.ndarray],
        metadata: Optional[Dict[str, Any]] = None,
    ):
        self.config = config
        self.vocab = vocab
        self.state = state
        self.metadata = metadata or {}


def _read_exact(handle: BinaryIO, size: int, path: Path) -> bytes:
    data = handle.read(size)
    if len(data) != size:
        raise DataError(f"checkpoint {path} is truncated")
    return data


def _unpack(fmt: str, handle: BinaryIO, path: Path) -> Tuple:
    return struct.unpack(fmt, _read_exact(handle, struct.calcsize(fmt), path))


def save_checkpoint(
    path: Union[str, Path],
    model: TransformerModel,
    vocab: Vocab,
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write atomically: the file appears complete or not at all."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = json.dumps(
        {
            "config": model.config.model_dump(),
            "vocab": vocab.characters,
            "metadata": metadata or {},
        },
        ensure_ascii=False,
    ).encode("utf-8")
    state = model.state_dict()

    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(state)))
        for name, array in state.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", array.ndim))
            f.write(struct.pack(f"<{array.ndim}Q", *array.shape))
            f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())
    os.replace(tmp, path)
    logger.debug(f"Saved checkpoint {path} ({len(state)} tensors)")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint {path} does not exist")
    with open(path, "rb") as f:
        if _read_exact(f, len(MAGIC), path) != MAGIC:
            raise DataError(f"{path} is not a checkpoint file (bad magic)")
        version, header_length = _unpack("<II", f, path)
        if version != VERSION:
            raise DataError(f"checkpoint {path} has unsupported version {version}")
        try:
            header = json.loads(_read_exact(f, header_length, path).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataError(f"checkpoint {path} has a corrupt header: {e}")
        (count,) = _unpack("<I", f, path)
        state: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_length,) = _unpack("<I", f, path)
            name = _read_exact(f, name_length, path).decode("utf-8")
            (ndim,) = _unpack("<I", f, path)
            shape = _unpack(f"<{ndim}Q", f, path)
            size = int(np.prod(shape, dtype=np.int64))
            payload = _read_exact(f, 8 * size, path)
            state[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
        if f.read(1):
            raise DataError(f"checkpoint {path} has trailing bytes")

    try:
        config = ModelConfig(**header["config"])
    except (KeyError, ValidationError) as e:
        raise ConfigError(f"checkpoint {path} holds an invalid model config: {e}")
    return Checkpoint(config, Vocab(header.get("vocab", [])), state, header.get("metadata"))


def load_model(path: Union[str, Path]) -> Tuple[TransformerModel, Vocab, Checkpoint]:
    """Rebuild the model a checkpoint was written from."""
    checkpoint = load_checkpoint(path)
    if len(checkpoint.vocab) != checkpoint.config.vocab_size:
        raise DataError(
            f"checkpoint {path}: vocabulary has {len(checkpoint.vocab)} symbols "
            f"but the model expects {checkpoint.config.vocab_size}"
        )
    # Initial values are overwritten by the stored parameters
    model = TransformerModel(checkpoint.config, RngStream(0))
    model.load_state_dict(checkpoint.state)
    logger.info(f"Loaded checkpoint {path}: {model.num_parameters()} parameters")
    return model, checkpoint.vocab, checkpoint
