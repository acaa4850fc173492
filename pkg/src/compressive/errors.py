"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateInputError(ValueError):
    """Input is too short or empty for the requested operation."""


class ContractError(RuntimeError):
    """A call violated an API precondition (e.g. backward on a non-scalar)."""


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class DataError(ValueError):
    """Malformed corpus or token ids."""


class CheckpointError(RuntimeError):
    """Checkpoint is corrupt, truncated or of an unsupported version."""


class TrainingFault(RuntimeError):
    """Non-finite loss or gradient during training."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step
