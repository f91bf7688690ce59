from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


class ManifestEntry(BaseModel):
    utt_id: str = Field(..., min_length=1)
    recording_id: str = Field(..., min_length=1)
    feature_path: str = Field(..., min_length=1)
    transcript: str

    @field_validator('transcript')
    def validate_transcript(cls, v):
        if not v:
            raise ValueError('transcript must not be empty')
        return v


class Utterance(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    utt_id: str = Field(..., min_length=1)
    recording_id: str = Field(..., min_length=1)
    features: np.ndarray
    transcript: str = Field(..., min_length=1)

    @field_validator('features')
    def validate_features(cls, v):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1:
            raise ValueError(f'features must be a non-empty [frames, mel_bins] matrix, got shape {v.shape}')
        if not np.all(np.isfinite(v)):
            raise ValueError('features contain non-finite values')
        return v

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


class Batch(BaseModel):
    """
    A padded group of utterances.

    decoder_inputs are <s> + ids, decoder_targets are ids + </s>; both padded with <pad>.
    Feature rows beyond frame_lengths are zero.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    utt_ids: List[str]
    features: np.ndarray
    frame_lengths: np.ndarray
    decoder_inputs: np.ndarray
    decoder_targets: np.ndarray
    target_lengths: np.ndarray

    @property
    def frame_mask(self) -> np.ndarray:
        return np.arange(self.features.shape[1])[None, :] < self.frame_lengths[:, None]

    @property
    def num_characters(self) -> int:
        """Non-pad target positions, </s> included."""
        return int(self.target_lengths.sum())

    @property
    def padded_frames(self) -> int:
        return self.features.shape[0] * self.features.shape[1]
