"""Exception types raised by the simulator."""


class QDuffingError(Exception):
    """Base class for all qduffing errors."""


class ConfigError(QDuffingError):
    """Invalid configuration. Carries the offending field name when known."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class SimulationError(QDuffingError):
    """Numerical failure inside a trajectory. ``step`` is the step index."""

    def __init__(self, message, step=None):
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
        self.step = step


class SingularStepError(SimulationError):
    """Normalization trace collapsed; reduce dt or enlarge the basis."""


class NumericalOverflowError(SimulationError):
    """Non-finite entries appeared in the state."""


class BasisTooSmallError(SimulationError):
    """Population piled up at the top of the truncated Fock basis."""


class JacobianError(QDuffingError):
    """Finite-difference Jacobian produced non-finite entries."""


class DegenerateTangentError(QDuffingError):
    """Tangent frame collapsed during Gram-Schmidt renormalization."""
