import numpy as np
import pytest

from app.models.transformer import TransformerModel
from app.schemas.config import ModelConfig
from app.schemas.data import Utterance
from app.services.vocab import Vocab
from app.tensor.rng import RngStream

MEL_BINS = 8


# 8 characters + 4 reserved symbols = 12 classes
@pytest.fixture
def vocab():
    return Vocab(list(" abcdefg"))


@pytest.fixture
def tiny_config():
    return ModelConfig(
        d_model=16,
        d_ff=32,
        num_heads=2,
        enc_layers=2,
        dec_layers=2,
        stack_factor=2,
        mel_bins=MEL_BINS,
        vocab_size=12,
        dropout=0.1,
        stochastic_p=0.5,
    )


@pytest.fixture
def tiny_model(tiny_config):
    return TransformerModel(tiny_config, RngStream(0))


# Factory for utterances with seeded random features
@pytest.fixture
def make_utterance():
    def _make(utt_id, frames, transcript="abc", recording_id="rec0", seed=0, mel_bins=MEL_BINS):
        features = RngStream(seed).normal((frames, mel_bins))
        return Utterance(utt_id=utt_id, recording_id=recording_id, features=features, transcript=transcript)
    return _make


@pytest.fixture
def features():
    return RngStream(42).normal((7, MEL_BINS))


# Factory for character-id arrays that avoid the reserved symbols
@pytest.fixture
def make_ids():
    def _make(seed, shape, low=4, high=12):
        return np.asarray(RngStream(seed).uniform(shape) * (high - low) + low, dtype=np.int64)
    return _make
