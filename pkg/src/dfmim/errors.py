"""Exception hierarchy shared by every module of the package."""


class DfmimError(Exception):
    """Base class for all package errors."""


class InvalidArgument(DfmimError, ValueError):
    pass


class ShapeError(DfmimError, ValueError):
    pass


class NumericalFailure(DfmimError, ArithmeticError):
    pass


class TrainingDiverged(NumericalFailure):
    """Raised when a training step produces a non-finite loss.

    The partially filled report is attached as ``report``.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class UnsupportedFormat(DfmimError):
    pass


class AudioReadError(DfmimError, OSError):
    pass


class ConfigError(DfmimError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class CheckpointError(DfmimError):
    pass


class CorruptFile(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass
