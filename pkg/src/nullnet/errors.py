"""Exception types shared across the package."""


class NullnetError(Exception):
    """Base class for all package errors."""


class GraphError(NullnetError, ValueError):
    """Invalid graph input or query (empty edge list, bad layer, bad index)."""


class FitError(NullnetError, RuntimeError):
    """Null-model fit failed.

    ``residual`` carries the best degree residual reached before giving up,
    when applicable.
    """

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(NullnetError, RuntimeError):
    """Iterative scheme did not converge; ``iterations`` records how far it got."""

    def __init__(self, message: str, iterations: int = 0):
        super().__init__(message)
        self.iterations = iterations


class ValidationError(NullnetError, ValueError):
    """Bad user input (malformed URL, out-of-range score, ragged matrix, ...)."""


class PipelineError(NullnetError, RuntimeError):
    """A pipeline stage failed; earlier artifacts remain on disk."""

    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage
