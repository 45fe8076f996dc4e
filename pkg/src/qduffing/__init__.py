"""qduffing: continuously monitored quantum Duffing oscillator.

Stochastic master equation trajectories in a moving Fock basis, record
replay through (possibly mismatched) filters, and Lyapunov exponent
estimation for the quantum-to-classical chaos transition.
"""

from .duffing_model import (
    FrameOffset,
    ModelParams,
    classical_flow,
    classical_jacobian,
    hamiltonian_at,
    lindblad_at,
)
from .errors import (
    BasisTooSmallError,
    ConfigError,
    DegenerateTangentError,
    JacobianError,
    NumericalOverflowError,
    QDuffingError,
    SimulationError,
    SingularStepError,
)
from .fock_linalg import (
    BandedOperator,
    OperatorTable,
    build_annihilation,
    build_operator_table,
    coherent_dm,
    displacement,
    expectation,
    fock_dm,
    hermitize,
    purity,
    trace_distance,
    vacuum_dm,
)
from .lyapunov import (
    LyapunovAccumulator,
    LyapunovSchedule,
    QuantumLyapunovResult,
    classical_lyapunov,
    finalize,
    gram_schmidt_update,
    integrate_classical,
    local_jacobian,
    quantum_lyapunov,
)
from .moving_basis import RecenterPolicy, recenter, tail_population
from .sme_engine import (
    StepInput,
    StepOutput,
    StepSchedule,
    TrajectoryRecord,
    deterministic_step,
    filter_step,
    lindblad_rk4_step,
    rouchon_step,
    simulate_trajectory,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
