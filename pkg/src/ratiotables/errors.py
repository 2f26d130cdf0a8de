"""Exception types raised by the estimators and the command-line front end."""


class RatioTablesError(Exception):
    """Base class for every error raised by this package."""


class FitError(RatioTablesError):
    """A fit could not produce a finite estimate or covariance."""


class Separation(FitError):
    """The estimating equation has no finite root (estimate at +/- infinity)."""


class Divergent(FitError):
    """Newton iteration failed to reach the gradient tolerance."""


class SingularHessian(FitError):
    """The bread matrix of a sandwich is not invertible."""


class RankDeficient(FitError):
    """The covariate design does not have full column rank."""


class ZeroVariance(FitError):
    """A test statistic has a zero variance estimate."""


class EmptyGroup(FitError):
    """One of the two groups has no subjects."""


class PreconditionViolated(RatioTablesError, ValueError):
    """An estimator was asked for on a table that does not satisfy its precondition."""


class NotApplicable(RatioTablesError, ValueError):
    """The requested estimator is not defined for this design."""


class NegativeTime(RatioTablesError, ValueError):
    pass


class InvalidProbability(RatioTablesError, ValueError):
    pass


class ParseError(RatioTablesError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
