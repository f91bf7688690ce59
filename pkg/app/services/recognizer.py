from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from app.models.checkpoint import load_model
from app.models.transformer import TransformerModel, count_parameters
from app.schemas.config import PRESETS, ModelConfig
from app.schemas.decoding import ModelInfoResponse, PresetInfo, Transcription
from app.services.decoder import beam_search
from app.services.normalizer import standardize
from app.services.vocab import Vocab
from app.utils.logger import setup_logger

logger = setup_logger()


class RecognizerService:
    """Eval-mode transcription over one loaded model; parameters are only read."""

    def __init__(self, model: TransformerModel, vocab: Vocab, metadata: Optional[Dict[str, Any]] = None):
        self.model = model
        self.vocab = vocab
        self.metadata = metadata or {}

    @classmethod
    def from_checkpoint(cls, path: Union[str, Path]) -> "RecognizerService":
        model, vocab, checkpoint = load_model(path)
        return cls(model, vocab, checkpoint.metadata)

    def info(self) -> ModelInfoResponse:
        return ModelInfoResponse(
            config=self.model.config.model_dump(),
            vocab_size=len(self.vocab),
            num_parameters=self.model.num_parameters(),
            metadata=self.metadata,
        )

    def transcribe(
        self,
        features: np.ndarray,
        beam_size: int,
        length_alpha: float,
        max_len: int,
    ) -> Transcription:
        if self.metadata.get("normalize", True):
            features = standardize(features)
        return beam_search(self.model, features, self.vocab, beam_size, length_alpha, max_len)


def preset_table(vocab_size: int = 32) -> List[PresetInfo]:
    rows = []
    for name in PRESETS:
        config = ModelConfig.preset(name, vocab_size)
        rows.append(
            PresetInfo(
                name=name,
                enc_layers=config.enc_layers,
                dec_layers=config.dec_layers,
                d_model=config.d_model,
                d_ff=config.d_ff,
                num_parameters=count_parameters(config),
            )
        )
    return rows
