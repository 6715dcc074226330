"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised when problem data or options are inconsistent (bad dimensions,
    out-of-range tolerances, malformed config files)."""


class DegenerateLikelihoodError(RuntimeError):
    """Raised by the particle filter when every particle weight underflows to
    zero, i.e. the filter has diverged from the measurement."""


class QPUnboundedError(RuntimeError):
    """Raised when the quadratic program has a feasible descent ray along
    which the objective decreases without bound."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative scheme hits its sweep cap before reaching the
    requested tolerance. Carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual
