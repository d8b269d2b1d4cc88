"""Exception hierarchy shared across the package."""


class KldwrmError(Exception):
    """Base class for all package errors."""


class DimensionError(KldwrmError, ValueError):
    pass


class SymmetryError(KldwrmError, ValueError):
    pass


class SingularMatrixError(KldwrmError, ArithmeticError):
    pass


class SizeCapError(KldwrmError, ValueError):
    pass


class NumericalError(KldwrmError, ArithmeticError):
    """Non-finite or diverging quantity during a computation."""

    def __init__(self, message, *, layer=None, step=None, norm=None):
        super().__init__(message)
        self.layer = layer
        self.step = step
        self.norm = norm


class ConfigError(KldwrmError, ValueError):
    pass


class StaleCacheError(KldwrmError, RuntimeError):
    pass


class IdxFormatError(KldwrmError, ValueError):
    """Malformed IDX container."""


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class EmptyDatasetError(IdxFormatError):
    pass
