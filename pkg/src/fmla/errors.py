"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class FmlaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FmlaError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(FmlaError, ValueError):
    """Invalid hyperparameter or configuration value."""


class DataError(FmlaError, ValueError):
    """Malformed, missing or inconsistent dataset."""


class ValidationError(FmlaError, ValueError):
    """An input violates an operation's precondition (e.g. not a distribution)."""


class NumericError(FmlaError, ArithmeticError):
    """A non-finite value appeared in a loss, gradient or function evaluation."""


class CheckpointError(FmlaError):
    """Checkpoint file could not be decoded."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass
