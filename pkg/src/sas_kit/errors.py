"""Exception types shared across the package."""


class SasKitError(ValueError):
    """Base class for every error raised by sas_kit."""


class ParseError(SasKitError):
    """A point-cloud file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateInputError(SasKitError):
    """Input geometry has no extent (coincident points, zero distances, too few points)."""


class DimensionMismatchError(SasKitError):
    """Array shapes that must agree do not."""


class ConvergenceError(SasKitError):
    """An iterative solver stopped before reaching its tolerance."""

    def __init__(self, message: str, residual: float, sweeps: int):
        self.residual = residual
        self.sweeps = sweeps
        super().__init__(f"{message} (residual={residual:.3e} after {sweeps} sweeps)")


class NonFiniteError(SasKitError):
    """A NaN or infinity appeared during a computation."""

    def __init__(self, message: str, step: int | None = None, epoch: int | None = None):
        self.step = step
        self.epoch = epoch
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if step is not None:
            where.append(f"step {step}")
        if where:
            message = f"{message} at {', '.join(where)}"
        super().__init__(message)


class MissingCacheError(SasKitError):
    """A backward pass was requested without the forward cache it needs."""


class ConfigError(SasKitError):
    """Configuration file missing, unreadable, or holding unknown keys."""


class BenchAssertionError(SasKitError):
    """A hard assertion inside a benchmark driver failed."""
