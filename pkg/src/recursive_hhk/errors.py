"""Exception hierarchy shared by all modules."""


class HHKError(Exception):
    """Base class for library errors."""


class DomainError(HHKError, ValueError):
    """An argument lies outside the domain where an operation is defined."""


class FelicityDomainError(DomainError):
    """A felicity function was evaluated outside its domain.

    ``time`` carries the offending time when the failure happened during
    a path integration.
    """

    def __init__(self, message, time=None):
        if time is not None:
            message = f"{message} (at t={time:.6g})"
        super().__init__(message)
        self.time = time


class GridMismatchError(DomainError):
    """Two objects live on incompatible time grids."""


class ConvergenceError(HHKError, RuntimeError):
    """An iterative scheme failed to converge.

    ``diagnostics`` holds whatever the solver could report about the failure
    (bracket trace, last iterate, residuals).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
