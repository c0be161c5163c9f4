"""Exception hierarchy shared by every module."""


class MatchcalError(Exception):
    """Base class for all library errors."""


class ParameterError(MatchcalError, ValueError):
    """An argument is outside its valid range."""


class InfeasibleError(MatchcalError):
    """The requested matching cannot be carried out (e.g. pool too small)."""


class RankError(MatchcalError, ArithmeticError):
    """A linear system is singular or numerically rank deficient.

    Attributes:
        pivot: index of the column found to be linearly dependent, if known.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class FitError(MatchcalError):
    """An iterative model fit failed; ``diagnostics`` holds what is known."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class StateError(MatchcalError):
    """An object lacks data required by the requested operation."""


class DegenerateSampleError(MatchcalError, ValueError):
    """Too few units to form a variance estimate."""


class SchemaError(MatchcalError, ValueError):
    """Input file does not agree with its declared schema."""


class ParseError(SchemaError):
    """A field could not be parsed as the declared type."""


class StudyAbortedError(MatchcalError):
    """Too many Monte Carlo replicates failed.

    Attributes:
        failures: list of ``(replicate, message)`` pairs.
    """

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = list(failures or [])
