from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.exceptions import ConfigError
from app.schemas.config import PRESETS, LossConfig, ModelConfig, TrainingConfig


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="ASR_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    log_dir: str = "logs"

    # Model served by the HTTP API
    checkpoint_path: Optional[str] = None

    # Decoding defaults
    default_beam: int = 4
    default_alpha: float = 0.6
    default_max_len: int = 200

    seed: int = 1234


@lru_cache
def get_settings() -> Settings:
    return Settings()


SECTIONS = {
    "model": ModelConfig,
    "training": TrainingConfig,
    "loss": LossConfig,
}
# vocab_size always comes from the training data
_DERIVED_KEYS = {"vocab_size"}


def _section_for(key: str) -> Optional[str]:
    for section, schema in SECTIONS.items():
        if key in schema.model_fields and key not in _DERIVED_KEYS:
            return section
    return None


def _parse_value(raw: str) -> Any:
    if raw.lower() in ("none", "null", ""):
        return None
    return raw


def load_config_file(path: Union[str, Path]) -> Dict[str, Dict[str, Any]]:
    """
    Read `key = value` lines into model / training / loss sections.

    `preset = NAME` selects a named depth/width row; '#' comments and blank lines are
    ignored. Unknown or repeated keys raise ConfigError naming the line.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
    sections["preset"] = {}
    seen = set()
    for line_number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        key, sep, value = content.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{path}:{line_number}: expected 'key = value', got {line.strip()!r}")
        if key in seen:
            raise ConfigError(f"{path}:{line_number}: key '{key}' given twice")
        seen.add(key)
        if key == "preset":
            if value not in PRESETS:
                raise ConfigError(f"{path}:{line_number}: unknown preset '{value}'")
            sections["preset"]["name"] = value
            continue
        section = _section_for(key)
        if section is None:
            raise ConfigError(f"{path}:{line_number}: unknown config key '{key}'")
        sections[section][key] = _parse_value(value)
    return sections


def _validation_message(error: ValidationError) -> str:
    return "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in error.errors())


def build_configs(
    sections: Optional[Dict[str, Dict[str, Any]]],
    vocab_size: int,
    overrides: Optional[Dict[str, Any]] = None,
) -> Tuple[ModelConfig, TrainingConfig, LossConfig]:
    """Combine file sections with command-line overrides (flags win); None overrides are ignored."""
    sections = sections or {}
    merged: Dict[str, Dict[str, Any]] = {name: dict(sections.get(name, {})) for name in SECTIONS}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section = _section_for(key)
        if section is None:
            raise ConfigError(f"unknown config key '{key}'")
        merged[section][key] = value
    try:
        preset = sections.get("preset", {}).get("name")
        if preset is not None:
            model = ModelConfig.preset(preset, vocab_size, **merged["model"])
        else:
            model = ModelConfig(vocab_size=vocab_size, **merged["model"])
        training = TrainingConfig(**merged["training"])
        loss = LossConfig(**merged["loss"])
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {_validation_message(e)}")
    except ValueError as e:
        raise ConfigError(str(e))
    return model, training, loss
