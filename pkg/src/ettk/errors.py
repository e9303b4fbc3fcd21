"""Exception types shared across the toolkit."""


class EttkError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(EttkError, ValueError):
    """Operand shapes do not agree."""


class ContractError(EttkError, ValueError):
    """A precondition of an operation was violated."""


class DomainError(EttkError, ValueError):
    """An input lies outside the mathematical domain of an op."""


class NonFiniteError(EttkError, FloatingPointError):
    """NaN or Inf detected where finite values are required."""


class WavError(EttkError):
    """Malformed, unsupported or mismatched WAV input."""


class CheckpointError(EttkError):
    """Corrupt or unreadable checkpoint / tensor container."""


class SpecMismatchError(EttkError):
    """A checkpoint or feature set does not match the requested model spec."""


class ConfigError(EttkError, ValueError):
    """Invalid configuration value."""


class TrainingDiverged(EttkError):
    """Loss became non-finite during training.

    ``state`` holds a diagnostic snapshot (epoch, batch, last losses, lr).
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state or {}
