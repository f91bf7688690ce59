from typing import List, Optional


class SpeechTransformerError(Exception):
    """Base class for every error raised by the speech transformer stack."""


class ConfigError(SpeechTransformerError, ValueError):
    """Invalid hyperparameter, probability or configuration file entry."""


class DimensionError(SpeechTransformerError, ValueError):
    """Tensor shapes that cannot be combined by an operation."""


class UsageError(SpeechTransformerError, RuntimeError):
    """An API called in a state or with arguments it does not support."""


class DataError(SpeechTransformerError, ValueError):
    """Malformed input data, optionally tied to one utterance."""

    def __init__(self, message: str, utt_id: Optional[str] = None):
        self.utt_id = utt_id
        if utt_id is not None:
            message = f"utterance '{utt_id}': {message}"
        super().__init__(message)


class ManifestError(DataError):
    """One or more manifest entries failed validation."""

    def __init__(self, failures: List[DataError]):
        self.failures = failures
        self.utt_ids = [f.utt_id for f in failures]
        summary = "; ".join(str(f) for f in failures[:5])
        if len(failures) > 5:
            summary += f"; ... ({len(failures) - 5} more)"
        super().__init__(f"{len(failures)} manifest entries failed: {summary}")


class NumericalError(SpeechTransformerError, ArithmeticError):
    """NaN or infinite values where finite ones are required."""


class TrainingDivergedError(NumericalError):
    """Training produced a non-finite loss; the last good checkpoint is kept."""

    def __init__(self, message: str, last_checkpoint: Optional[str] = None):
        self.last_checkpoint = last_checkpoint
        if last_checkpoint:
            message = f"{message} (last good checkpoint: {last_checkpoint})"
        super().__init__(message)
