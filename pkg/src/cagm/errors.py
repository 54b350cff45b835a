"""Exception types shared across the package."""


class DimensionError(ValueError):
    """An array shape is incompatible with a declared interface."""


class ConfigError(ValueError):
    """A configuration value is out of range or inconsistent."""


class SchemaError(ValueError):
    """A config or checkpoint document contains unknown or missing keys."""

    def __init__(self, message: str, keys=()):
        super().__init__(message)
        self.keys = tuple(keys)


class EvaluationError(RuntimeError):
    """A function produced a non-finite value where a finite one is required."""


class DivergenceError(RuntimeError):
    """Training or time stepping left the finite regime.

    Carries the iteration (or time index) at which the blow-up was detected
    and, when available, the loss history up to that point.
    """

    def __init__(self, message: str, iteration=None, history=None):
        super().__init__(message)
        self.iteration = iteration
        self.history = history


class NotPsdError(RuntimeError):
    """A covariance matrix failed Cholesky factorization even with jitter."""

    def __init__(self, message: str, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class DegenerateDistributionError(ValueError):
    """A sample set has zero variance, so no Gaussian fit exists."""


class IllConditionedError(RuntimeError):
    """Every optimizer restart failed on ill-conditioned data."""


class CheckpointError(RuntimeError):
    """A checkpoint file is unreadable, truncated, or from a wrong schema."""
