"""Exception hierarchy shared across the package."""

from __future__ import annotations


class TandemError(Exception):
    """Base class for all errors raised by tandem."""


class BudgetExceededError(TandemError, ValueError):
    pass


class StageOutOfOrderError(TandemError, ValueError):
    pass


class MissingStageBoundaryError(TandemError, KeyError):
    pass


class BackendError(TandemError):
    """Raised by model backends; carries the partial episode trace when known."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class TransportError(BackendError):
    pass


class CapabilityError(BackendError):
    pass


class EmptyInputError(TandemError, ValueError):
    pass


class InvalidDistributionError(TandemError, ValueError):
    pass


class DimensionMismatchError(TandemError, ValueError):
    pass


class SingleClassDataError(TandemError, ValueError):
    pass


class EmptyDataError(TandemError, ValueError):
    pass


class EmptyStageError(TandemError, ValueError):
    pass


class ClassifierMissingError(TandemError, LookupError):
    pass


class MissingPriceError(TandemError, ValueError):
    pass


class MissingStageDataError(TandemError, LookupError):
    pass


class TraceSchemaError(TandemError, ValueError):
    """A trace line was written by an incompatible schema version."""


class ParseError(TandemError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class UnknownFormatError(TandemError, ValueError):
    pass


class GraderUnavailableError(TandemError, RuntimeError):
    pass


class MissingGradesError(TandemError, ValueError):
    pass


class ConfigError(TandemError, ValueError):
    pass


class UsageError(TandemError):
    pass
