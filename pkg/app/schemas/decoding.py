from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class Hypothesis(BaseModel):
    """A partial or finished character sequence; token_ids exclude the leading <s>."""
    token_ids: List[int] = Field(default_factory=list)
    log_prob: float = 0.0
    finished: bool = False

    def extend(self, token_id: int, log_prob: float, eos_id: int) -> "Hypothesis":
        return Hypothesis(
            token_ids=self.token_ids + [token_id],
            log_prob=self.log_prob + log_prob,
            finished=token_id == eos_id,
        )

    def score(self, length_alpha: float) -> float:
        """Length-normalised log-probability; </s> counts towards the length."""
        return self.log_prob / (max(len(self.token_ids), 1) ** length_alpha)


class Transcription(BaseModel):
    text: str
    token_ids: List[int]
    log_prob: float
    score: float
    truncated: bool = False


class UtteranceScore(BaseModel):
    utt_id: str
    substitutions: int = Field(..., ge=0)
    deletions: int = Field(..., ge=0)
    insertions: int = Field(..., ge=0)
    reference_words: int = Field(..., ge=0)

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_words if self.reference_words else float(self.errors > 0)


class EvalReport(BaseModel):
    substitutions: int = Field(..., ge=0)
    deletions: int = Field(..., ge=0)
    insertions: int = Field(..., ge=0)
    reference_words: int = Field(..., ge=0)
    character_errors: int = Field(..., ge=0)
    reference_characters: int = Field(..., ge=0)
    wer: float
    cer: float
    utterances: List[UtteranceScore] = Field(default_factory=list)


class TranscribeResponse(BaseModel):
    text: str
    score: float
    log_prob: float
    truncated: bool
    frames: int


class ModelInfoResponse(BaseModel):
    config: Dict[str, Any]
    vocab_size: int
    num_parameters: int
    metadata: Optional[Dict[str, Any]] = None


class PresetInfo(BaseModel):
    name: str
    enc_layers: int
    dec_layers: int
    d_model: int
    d_ff: int
    num_parameters: int
