"""Exception and warning types shared across the package."""


class PecsError(Exception):
    """Base class for all errors raised by pecs."""


class FormatError(PecsError):
    pass


class TruncationError(FormatError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ChannelError(PecsError):
    pass


class ParseError(PecsError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DomainError(PecsError, ValueError):
    pass


class QuantizationError(DomainError):
    pass


class NormalizationError(PecsError):
    pass


class PartitionSpecError(PecsError, ValueError):
    pass


class FitError(PecsError):
    """Fit did not converge; ``best`` carries the best attempt, if any."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class RankError(FitError):
    pass


class GridError(PecsError, ValueError):
    pass


class ExtentError(GridError):
    pass


class ReducibilityError(PecsError):
    pass


class SolverError(PecsError):
    pass


class StabilityError(SolverError):
    pass


class ConfigError(PecsError, ValueError):
    pass


class SizeError(PecsError):
    pass


class PlotError(PecsError):
    pass


class PecsWarning(UserWarning):
    pass


class UnsortedInputWarning(PecsWarning):
    pass


class EmptyRecordWarning(PecsWarning):
    pass


class ClippedAxisWarning(PecsWarning):
    pass


class BoundaryWarning(PecsWarning):
    pass


class ModelConsistencyWarning(PecsWarning):
    pass


class DefectiveMatrixWarning(PecsWarning):
    pass
