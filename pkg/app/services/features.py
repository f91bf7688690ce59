"""FBANK1 feature files: 8-byte magic, u32 rows, u32 cols, then float32 values row-major (little-endian)."""
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from app.exceptions import DataError

MAGIC = b"FBANK1\0\0"
HEADER = struct.Struct("<II")


def parse_features(payload: bytes, utt_id: Optional[str] = None, expected_bins: Optional[int] = None) -> np.ndarray:
    """Decode an in-memory FBANK1 blob into a float64 [frames, mel_bins] matrix."""
    if len(payload) < len(MAGIC) + HEADER.size or payload[:len(MAGIC)] != MAGIC:
        raise DataError("corrupted feature header (bad magic)", utt_id)
    rows, cols = HEADER.unpack_from(payload, len(MAGIC))
    if rows < 1 or cols < 1:
        raise DataError(f"feature header declares an empty matrix ({rows}x{cols})", utt_id)
    if expected_bins is not None and cols != expected_bins:
        raise DataError(f"expected {expected_bins} mel bins, file has {cols}", utt_id)
    body = payload[len(MAGIC) + HEADER.size:]
    if len(body) != 4 * rows * cols:
        raise DataError(
            f"feature payload holds {len(body)} bytes, header {rows}x{cols} needs {4 * rows * cols}", utt_id
        )
    features = np.frombuffer(body, dtype="<f4").astype(np.float64).reshape(rows, cols)
    if not np.all(np.isfinite(features)):
        raise DataError("features contain non-finite values", utt_id)
    return features


def read_features(
    path: Union[str, Path], utt_id: Optional[str] = None, expected_bins: Optional[int] = None
) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"feature file {path} does not exist", utt_id)
    return parse_features(path.read_bytes(), utt_id, expected_bins)


def encode_features(features: np.ndarray) -> bytes:
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
        raise DataError(f"features must be a non-empty 2-D matrix, got shape {features.shape}")
    return MAGIC + HEADER.pack(*features.shape) + np.ascontiguousarray(features, dtype="<f4").tobytes()


def write_features(path: Union[str, Path], features: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_features(features))
    return path
