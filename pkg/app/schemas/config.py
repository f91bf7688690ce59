from typing import Dict, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    d_model: int = Field(512, ge=2)
    d_ff: int = Field(1024, ge=1)
    num_heads: int = Field(8, ge=1)
    enc_layers: int = Field(12, ge=1)
    dec_layers: int = Field(12, ge=1)
    stack_factor: int = Field(4, ge=1)
    mel_bins: int = Field(40, ge=1)
    vocab_size: int = Field(32, ge=5)
    dropout: float = 0.2
    stochastic_p: Optional[float] = 0.5
    stochastic_schedule: Literal["linear", "constant"] = "linear"
    identity_skip: bool = False
    tie_embeddings: bool = False

    @field_validator('dropout')
    def validate_dropout(cls, v):
        if not 0.0 <= v < 1.0:
            raise ValueError('dropout must be in [0, 1)')
        return v

    @field_validator('stochastic_p')
    def validate_stochastic_p(cls, v):
        # p = 0 would give the top layer a drop probability of exactly 1
        if v is not None and not 0.0 < v < 1.0:
            raise ValueError('stochastic_p must be in (0, 1) or None to disable stochastic layers')
        return v

    @model_validator(mode='after')
    def validate_widths(self):
        if self.d_model % self.num_heads != 0:
            raise ValueError(f'd_model {self.d_model} is not divisible by num_heads {self.num_heads}')
        if self.d_model % 2 != 0:
            raise ValueError('d_model must be even for the sinusoidal positional encoding')
        return self

    @classmethod
    def preset(cls, name: str, vocab_size: int = 32, **overrides) -> "ModelConfig":
        if name not in PRESETS:
            raise ValueError(f"Unknown preset '{name}'. Must be one of: {', '.join(PRESETS)}")
        return cls(**{**PRESETS[name], "vocab_size": vocab_size, **overrides})


# Depth/width rows of the published parameter-count table.
PRESETS: Dict[str, Dict[str, int]] = {
    "04enc-04dec": {"enc_layers": 4, "dec_layers": 4},
    "08enc-08dec": {"enc_layers": 8, "dec_layers": 8},
    "12enc-12dec": {"enc_layers": 12, "dec_layers": 12},
    "24enc-24dec": {"enc_layers": 24, "dec_layers": 24},
    "48enc-48dec": {"enc_layers": 48, "dec_layers": 48},
    "48enc-48dec-half": {"enc_layers": 48, "dec_layers": 48, "d_model": 256, "d_ff": 512, "num_heads": 4},
    "24enc-12dec": {"enc_layers": 24, "dec_layers": 12},
    "36enc-8dec": {"enc_layers": 36, "dec_layers": 8},
    "36enc-12dec": {"enc_layers": 36, "dec_layers": 12},
    "40enc-8dec": {"enc_layers": 40, "dec_layers": 8},
}


class LossConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    label_smoothing: float = 0.1
    char_dropout: float = 0.1
    pad_id: int = 0

    @field_validator('label_smoothing', 'char_dropout')
    def validate_probability(cls, v, info):
        if not 0.0 <= v < 1.0:
            raise ValueError(f'{info.field_name} must be in [0, 1)')
        return v


class TrainingConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    init_lr: float = Field(2.0, gt=0)
    warmup_steps: int = Field(8000, ge=1)
    char_budget: int = Field(25000, ge=1)
    frame_budget: int = Field(20000, ge=1)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = Field(1e-9, gt=0)
    clip_norm: Optional[float] = Field(None, gt=0)
    max_updates: int = Field(100000, ge=1)
    max_epochs: Optional[int] = Field(None, ge=1)
    checkpoint_every: int = Field(1000, ge=1)
    patience: Optional[int] = Field(None, ge=1)
    seed: int = Field(1234, ge=0)
    normalize: bool = True

    @field_validator('adam_beta1', 'adam_beta2')
    def validate_beta(cls, v, info):
        if not 0.0 <= v < 1.0:
            raise ValueError(f'{info.field_name} must be in [0, 1)')
        return v
