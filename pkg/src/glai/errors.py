"""Exception hierarchy shared by every module."""


class GlaiError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GlaiError, ValueError):
    pass


class InvalidArchError(GlaiError, ValueError):
    pass


class BottleneckError(GlaiError, ValueError):
    """The reduced last hidden layer would be narrower than the output layer."""


class EqualWidthError(GlaiError, ValueError):
    """Architectures whose last hidden layer equals the output width cannot be reduced."""


class ReducedNotSmallerError(GlaiError, ValueError):
    pass


class SigmaOutOfRangeError(GlaiError, ValueError):
    pass


class PathBudgetExceeded(GlaiError):
    pass


class PathCountOverflow(GlaiError, OverflowError):
    pass


class ArchMismatchError(GlaiError, ValueError):
    pass


class DivergenceError(GlaiError, FloatingPointError):
    """Training produced a non-finite loss."""


class DatasetError(GlaiError):
    pass


class ParseError(DatasetError, ValueError):
    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class InconsistentWidthError(DatasetError, ValueError):
    pass


class BadMagicError(DatasetError, ValueError):
    pass


class CountMismatchError(DatasetError, ValueError):
    pass


class TruncatedFileError(DatasetError, ValueError):
    pass


class EmptyHistoryError(GlaiError, ValueError):
    pass


class ConfigError(GlaiError, ValueError):
    pass
