"""Exception types shared across the package."""


class UMixError(Exception):
    """Base class for every error raised by umixformer."""


class DimensionError(UMixError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(UMixError, ValueError):
    """A configuration value violates an architectural constraint."""


class UsageError(UMixError, RuntimeError):
    """An API was called in an invalid order or with invalid arguments."""


class SequencingError(UsageError):
    """A decoder stage was requested before the outputs it depends on exist."""


class NumericalError(UMixError, ArithmeticError):
    """A non-finite value appeared during training or evaluation."""


class CheckpointError(UMixError, ValueError):
    """A checkpoint file is malformed, truncated, or of an unknown version."""
