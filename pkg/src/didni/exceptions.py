"""Exception types shared across the package."""


class DidniError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(DidniError):
    """Invalid user input: malformed panels, bad specs, bad column mappings."""


class RankDeficientError(DidniError):
    """Design matrix is not full column rank.

    Carries the names of the columns identified as collinear so callers can
    report which regressors to drop or respecify.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class ComputationError(DidniError):
    """A numerical procedure failed (degenerate resampling, all-lambda rank problems, ...)."""
