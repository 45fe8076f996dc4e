"""Driven double-well (Duffing) oscillator model in dimensionless form.

The Hamiltonian, with classicality scale beta > 0, drive amplitude g and
damping/measurement rate Gamma, is

    H = p^2/2 + (beta^2/4) q^4 - q^2/2 + (g/beta) cos(t + phi) q
        + (Gamma/2)(qp + pq)

and the damping channel is L = sqrt(2 Gamma) a (optionally sqrt(2 Gamma) q
for a position measurement). The (qp+pq) term exists to convert the
symmetric phase-space damping of the L channel into pure momentum damping,
see ``classical_flow``.

The simulator keeps the truncated basis centered on the state by working in
a displaced frame (q0, p0): operators are rewritten with q -> q + q0,
p -> p + p0. Because H is polynomial, the substitution is carried out
analytically by binomial expansion over the cached monomials of
``OperatorTable`` - exact, and O(dim) per coefficient instead of the
O(dim^3) of conjugating with displacement unitaries. The constant
(identity) term of the expansion is kept: it only contributes a global
phase, but keeping it makes frame covariance exact in tests.

Classical limit
---------------
Hamilton's equations for the H above give

    dq/dt =  dH/dp = p + Gamma q
    dp/dt = -dH/dq = q - beta^2 q^3 - (g/beta) cos(t + phi) - Gamma p

and the L = sqrt(2 Gamma) a channel adds mean-field damping
d<a>/dt = -Gamma <a>, i.e. an extra -Gamma q in dq/dt and -Gamma p in
dp/dt. The Gamma q contributions cancel, leaving damping of p only:

    dq/dt = p
    dp/dt = q - beta^2 q^3 - (g/beta) cos(t + phi) - 2 Gamma p

In the scaled coordinates x = beta q, y = beta p the flow is
beta-independent:

    dx/dt = y
    dy/dt = x - x^3 - 2 Gamma y - g cos(t + phi)

This is the flow integrated by the classical Lyapunov oracle; its Jacobian
[[0, 1], [1 - 3x^2, -2 Gamma]] has trace -2 Gamma, so the two nonzero
Lyapunov exponents always sum to -2 Gamma.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fock_linalg import BandedOperator, OperatorTable

LINDBLAD_KINDS = ("annihilation", "position")

# 'harmonic' (potential +q^2/2, no quartic term) and 'zero' (H = 0) are
# test hooks that keep the frame machinery but replace the potential.
HAMILTONIAN_VARIANTS = ("duffing", "harmonic", "zero")


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the monitored Duffing oscillator.

    beta: classicality scale (> 0); phase-space area grows as 1/beta^2 and
        beta -> 0 is the classical limit.
    g: drive amplitude coefficient (>= 0); the drive term is (g/beta) cos.
    gamma: damping / measurement rate (> 0).
    eta: measurement efficiency in [0, 1].
    drive_phase: phase offset phi of the cosine drive.
    lindblad_kind: 'annihilation' for L = sqrt(2 Gamma) a, 'position' for
        L = sqrt(2 Gamma) q.
    hamiltonian: 'duffing' for the production model; 'harmonic' / 'zero'
        are reduced variants used by oracle tests.
    """

    beta: float
    g: float
    gamma: float
    eta: float
    drive_phase: float = 0.0
    lindblad_kind: str = "annihilation"
    hamiltonian: str = "duffing"

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not (self.g >= 0 and math.isfinite(self.g)):
            raise ValueError(f"g must be >= 0, got {self.g}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not (0.0 <= self.eta <= 1.0):
            raise ValueError(f"eta must be in [0, 1], got {self.eta}")
        if not math.isfinite(self.drive_phase):
            raise ValueError("drive_phase must be finite")
        if self.lindblad_kind not in LINDBLAD_KINDS:
            raise ValueError(f"lindblad_kind must be one of {LINDBLAD_KINDS}")
        if self.hamiltonian not in HAMILTONIAN_VARIANTS:
            raise ValueError(f"hamiltonian must be one of {HAMILTONIAN_VARIANTS}")


@dataclass(frozen=True)
class FrameOffset:
    """Phase-space displacement (q0, p0) of the moving basis."""

    q0: float = 0.0
    p0: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.q0) and math.isfinite(self.p0)):
            raise ValueError("frame offsets must be finite")

    @property
    def alpha(self) -> complex:
        """Coherent amplitude (q0 + i p0) / sqrt(2) of the frame center."""
        return complex(self.q0, self.p0) / math.sqrt(2.0)


def drive_coefficient(t: float, params: ModelParams) -> float:
    """Coefficient (g/beta) cos(t + phi) multiplying the drive operator."""
    if params.hamiltonian == "zero":
        return 0.0
    return (params.g / params.beta) * math.cos(t + params.drive_phase)


def _potential_coefficients(params: ModelParams) -> tuple[float, float, float]:
    """(c4, c2, kinetic) so that H = kinetic*p^2/2 + c4 q^4 + c2 q^2 + ..."""
    if params.hamiltonian == "duffing":
        return params.beta ** 2 / 4.0, -0.5, 1.0
    if params.hamiltonian == "harmonic":
        return 0.0, 0.5, 1.0
    return 0.0, 0.0, 0.0


def hamiltonian_coefficients(t: float, frame: FrameOffset,
                             params: ModelParams) -> dict[str, float]:
    """Monomial coefficients of H with q -> q + q0, p -> p + p0 substituted.

    Keys match the ``OperatorTable`` attributes. The drive is evaluated at
    time t; ``hamiltonian_static_coefficients`` gives the same expansion
    with the drive split off.
    """
    static, drive = hamiltonian_static_coefficients(frame, params)
    cd = drive_coefficient(t, params)
    out = dict(static)
    out["q"] += cd * drive["q"]
    out["identity"] += cd * drive["identity"]
    return out


def hamiltonian_static_coefficients(frame: FrameOffset, params: ModelParams):
    """Frame-expanded coefficients, split into (static, drive_operator).

    The full Hamiltonian at time t is
    static + drive_coefficient(t) * drive_operator, where drive_operator
    is the frame-shifted position q + q0.
    """
    q0, p0 = frame.q0, frame.p0
    c4, c2, kin = _potential_coefficients(params)
    gam = params.gamma if params.hamiltonian != "zero" else 0.0
    static = {
        "q4": c4,
        "q3": 4.0 * c4 * q0,
        "q2": 6.0 * c4 * q0 ** 2 + c2,
        "q": 4.0 * c4 * q0 ** 3 + 2.0 * c2 * q0 + gam * p0,
        "p2": 0.5 * kin,
        "p": kin * p0 + gam * q0,
        "qp_pq": 0.5 * gam,
        "identity": (c4 * q0 ** 4 + c2 * q0 ** 2 + 0.5 * kin * p0 ** 2
                     + gam * q0 * p0),
    }
    drive = {"q": 1.0, "identity": q0}
    return static, drive


def hamiltonian_at(t: float, frame: FrameOffset, params: ModelParams,
                   table: OperatorTable) -> np.ndarray:
    """Dense Hamiltonian matrix in the moving frame at time t."""
    coeffs = hamiltonian_coefficients(t, frame, params)
    h = np.zeros((table.dim, table.dim), dtype=np.complex128)
    for name, c in coeffs.items():
        if c != 0.0:
            h += c * getattr(table, name)
    return h


def hamiltonian_static_banded(frame: FrameOffset, params: ModelParams,
                              table: OperatorTable) -> BandedOperator:
    """Banded drive-free part of the frame-shifted Hamiltonian."""
    static, _ = hamiltonian_static_coefficients(frame, params)
    return BandedOperator.combine(
        table.dim, [(c, table.band(name)) for name, c in static.items()])


def drive_operator_banded(frame: FrameOffset, table: OperatorTable) -> BandedOperator:
    """Banded frame-shifted drive operator q + q0."""
    return BandedOperator.combine(
        table.dim, [(1.0, table.band("q")), (frame.q0, table.band("identity"))])


def lindblad_constant(frame: FrameOffset, params: ModelParams) -> complex:
    """Scalar added to the Lindblad operator by the frame shift."""
    scale = math.sqrt(2.0 * params.gamma)
    if params.lindblad_kind == "annihilation":
        return scale * frame.alpha
    return scale * frame.q0


def lindblad_at(frame: FrameOffset, params: ModelParams,
                table: OperatorTable) -> np.ndarray:
    """Dense Lindblad operator in the moving frame.

    sqrt(2 Gamma)(a + alpha0) for kind 'annihilation' with
    alpha0 = (q0 + i p0)/sqrt(2); sqrt(2 Gamma)(q + q0) for 'position'.
    """
    scale = math.sqrt(2.0 * params.gamma)
    base = table.a if params.lindblad_kind == "annihilation" else table.q
    return scale * base + lindblad_constant(frame, params) * table.identity


def lindblad_banded(frame: FrameOffset, params: ModelParams,
                    table: OperatorTable) -> BandedOperator:
    """Banded form of ``lindblad_at``."""
    scale = math.sqrt(2.0 * params.gamma)
    base = "a" if params.lindblad_kind == "annihilation" else "q"
    return BandedOperator.combine(
        table.dim,
        [(scale, table.band(base)),
         (lindblad_constant(frame, params), table.band("identity"))])


def classical_flow(state, t: float, params: ModelParams) -> np.ndarray:
    """Scaled classical flow (dx/dt, dy/dt); see the module docstring for
    the derivation. x = beta <q>, y = beta <p>."""
    if params.hamiltonian != "duffing":
        raise ValueError("classical flow is defined for the duffing model only")
    x, y = float(state[0]), float(state[1])
    return np.array([
        y,
        x - x ** 3 - 2.0 * params.gamma * y
        - params.g * math.cos(t + params.drive_phase),
    ])


def classical_jacobian(state, t: float, params: ModelParams) -> np.ndarray:
    """Exact Jacobian of ``classical_flow``: [[0, 1], [1 - 3x^2, -2 Gamma]]."""
    if params.hamiltonian != "duffing":
        raise ValueError("classical flow is defined for the duffing model only")
    x = float(state[0])
    return np.array([
        [0.0, 1.0],
        [1.0 - 3.0 * x ** 2, -2.0 * params.gamma],
    ])
