"""Exception hierarchy shared by every module."""


class GenHeckError(Exception):
    """Base class for all package errors."""


class DomainError(GenHeckError, ValueError):
    """A scalar argument lies outside its admissible domain."""


class DimensionMismatch(GenHeckError, ValueError):
    """Parameter blocks and design matrices disagree in size."""


class NonConvergence(GenHeckError, RuntimeError):
    """An iterative routine stopped before meeting its tolerance.

    ``result`` carries the partial fit (if any) so callers can inspect it.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class SingularInformation(NonConvergence):
    """The observed information is not positive definite at the optimum."""


class MissingCensoring(GenHeckError, ValueError):
    """The selection indicator is constant, so the selection equation is unidentified."""


class NotConverged(GenHeckError, ValueError):
    """An operation that requires a converged fit received one that is not."""


class NotNested(GenHeckError, ValueError):
    """The restricted model attains a higher likelihood than the full model."""


class SingularCovariance(GenHeckError, ValueError):
    """The covariance sub-block of a Wald restriction cannot be inverted."""


class InvalidScenario(GenHeckError, ValueError):
    """Unknown simulation scenario id."""


class ParseError(GenHeckError, ValueError):
    """Malformed CSV content; message names the offending row and column."""


class SchemaError(GenHeckError, ValueError):
    """CSV header does not contain a configured column."""
