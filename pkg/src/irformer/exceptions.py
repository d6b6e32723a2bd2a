"""Error types raised across the package."""


class IRFormerError(Exception):
    """Base class for package errors."""


class DimensionError(IRFormerError, ValueError):
    """Tensor shapes are incompatible with an operation."""


class ConfigError(IRFormerError, ValueError):
    """A model or run configuration violates its invariants."""


class ContractError(IRFormerError, RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class FormatError(IRFormerError, ValueError):
    """An image file uses an unsupported encoding."""


class DatasetError(IRFormerError, ValueError):
    """A dataset directory cannot be paired into visible/infrared samples."""


class CorruptCheckpointError(IRFormerError, ValueError):
    """A checkpoint is malformed or does not match its configuration."""


class NumericalError(IRFormerError, FloatingPointError):
    """Training produced a non-finite value."""
