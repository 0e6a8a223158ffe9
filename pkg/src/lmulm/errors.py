"""Exception types shared across the package."""


class LmuError(Exception):
    """Base class for all package errors."""


class DimensionError(LmuError, ValueError):
    pass


class LengthError(LmuError, ValueError):
    pass


class ConfigError(LmuError, ValueError):
    pass


class NumericError(LmuError, ArithmeticError):
    pass


class StateError(LmuError, RuntimeError):
    pass


class InputError(LmuError, ValueError):
    pass


class SizingError(LmuError, ValueError):
    pass


class DomainError(LmuError, ValueError):
    pass


class TrainingDiverged(LmuError, RuntimeError):
    pass


class CheckpointError(LmuError):
    """Base for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class RangeError(InputError):
    """Token id outside the vocabulary."""
