"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class UsageError(ValueError):
    """Inputs are individually valid but inconsistent with each other."""


class AssemblyError(RuntimeError):
    """A boundary value problem could not be assembled from a problem spec."""


class SolveError(RuntimeError):
    """Newton iteration failed to converge.

    Carries the last iterate and the residual history so that callers can
    write partial diagnostics.
    """

    def __init__(self, message, last_iterate=None, residual_history=None, location=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_history = list(residual_history or [])
        self.location = location
