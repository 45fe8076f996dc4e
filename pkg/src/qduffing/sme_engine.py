"""Stochastic master equation integrator for the monitored oscillator.

The conditioned state rho evolves under continuous monitoring of the
damping channel L with efficiency eta. One time step applies the
positivity-preserving Kraus-form update

    rho' = ( M rho M^dag + (1 - eta) L rho L^dag dt ) / Tr[ ... ]

with step operator

    M = U K,
    K = I - (i c_d(t) Q + L^dag L / 2) dt
        + (eta / 2) L^2 (dW^2 - dt)
        + sqrt(eta) L (sqrt(eta) Tr[L rho + rho L^dag] dt + dW),
    U = exp(-i H_static dt),

where H_static is the drive-free part of the frame-shifted Hamiltonian,
c_d(t) Q the (small) drive term with Q = q + q0, and dW a Gaussian
increment of zero mean and variance dt. Expanding U to first order
recovers the plain Euler-Kraus operator I - (i H + L^dag L / 2) dt +
noise terms; the two forms agree to O(dt^2) and share the same strong
order. The split exists for stability: under a hard Fock truncation the
Euler factor amplifies components at level n by |1 - i dt E_n|^2 =
1 + (dt E_n)^2 per step, and with the quartic potential (E_n ~ n^2) this
overwhelms the damping -2 Gamma n dt at the basis sizes this simulator
must support, destroying trajectories within a few hundred steps.
Applying the static unitary exactly (diagonalized once per frame
segment) removes the amplification; the remaining explicit factors are
bounded at every level. For H_static = 0 the scheme reduces exactly to
the Euler form.

The generated measurement record is the increment

    dy = sqrt(eta) Tr[L rho + rho L^dag] dt + dW ,

and the last term of M is just sqrt(eta) L dy. All step functions are
routed through a record-driven kernel taking dy and reconstructing
dW = dy - sqrt(eta) Tr[...] dt, so a filter replaying a stored record
with matched parameters performs bit-for-bit the same arithmetic as the
trajectory that generated it.

States are hermitized ((X + X^dag)/2) and trace-renormalized after every
step. At eta = 1 the update is a single Kraus operator, so pure states
stay exactly pure; the integrator then propagates a state vector instead
of the density matrix (the "pure lane"), which makes ideal-efficiency
sweeps cheap.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .duffing_model import (
    FrameOffset,
    ModelParams,
    drive_coefficient,
    drive_operator_banded,
    hamiltonian_static_coefficients,
    lindblad_banded,
    lindblad_constant,
)
from .errors import BasisTooSmallError, NumericalOverflowError, SingularStepError
from .fock_linalg import (
    BandedOperator,
    build_operator_table,
    displacement,
    hermitize,
    purity,
)
from .moving_basis import RecenterPolicy, local_mean_amplitude, tail_population

_TABLE_CACHE: dict[int, object] = {}

# The explicit banded factor K spans offsets -2..2 (drive, L, L^2, L^dag L).
_K_OFFSETS = np.arange(-2, 3, dtype=np.int64)


def get_table(dim: int):
    """Shared immutable operator table for a basis size."""
    table = _TABLE_CACHE.get(dim)
    if table is None:
        table = build_operator_table(dim)
        _TABLE_CACHE[dim] = table
    return table


class _KParts:
    """Banded ingredients of the explicit factor K for one frame."""

    def __init__(self, params: ModelParams, frame: FrameOffset, dt: float, table):
        dim = table.dim
        self.l_band = lindblad_banded(frame, params, table)
        ldag = self.l_band.dagger()
        self.ldl_band = ldag @ self.l_band
        l2_band = self.l_band @ self.l_band
        drive_op = drive_operator_banded(frame, table)
        koff = _K_OFFSETS
        eye = table.band("identity")
        self.k_offsets = koff
        self.k_base = (eye.padded_to(koff)
                       - 0.5 * dt * self.ldl_band.padded_to(koff)
                       - 0.5 * params.eta * dt * l2_band.padded_to(koff))
        self.drive_pad = drive_op.padded_to(koff)
        self.l_pad = self.l_band.padded_to(koff)
        self.l2_pad = l2_band.padded_to(koff)
        self.eta = params.eta
        self.sqrt_eta = math.sqrt(params.eta)
        self.dt = float(dt)
        self.params = params
        self.frame = frame
        self.dim = dim

    def assemble_k(self, t: float, dy: float, dw: float) -> np.ndarray:
        """Banded K as a padded diagonal array for one step."""
        cd = drive_coefficient(t, self.params)
        k = self.k_base + (-1j * self.dt * cd) * self.drive_pad
        if self.eta > 0.0:
            k = k + (0.5 * self.eta * dw * dw) * self.l2_pad
            k = k + (self.sqrt_eta * dy) * self.l_pad
        return k


class StepContext(_KParts):
    """Full per-frame context: K ingredients plus the exact static unitary.

    Rebuilt whenever the moving frame changes. The eigendecomposition of
    the static Hamiltonian amortizes over the steps between recenters;
    across a recenter the unitary can instead be displacement-conjugated
    (see ``recentered``), which is exact up to truncation-boundary
    residue, with a periodic fresh diagonalization to stop that residue
    from accumulating.
    """

    def __init__(self, params: ModelParams, frame: FrameOffset, dt: float,
                 dim: int, u_pair=None):
        table = get_table(dim)
        super().__init__(params, frame, dt, table)
        self.table = table

        if u_pair is not None:
            self.u_static, self.u_static_dag = u_pair
        else:
            static, _ = hamiltonian_static_coefficients(frame, params)
            h_static = np.zeros((dim, dim), dtype=np.complex128)
            nonzero = False
            for name, c in static.items():
                if c != 0.0:
                    h_static += c * getattr(table, name)
                    nonzero = True
            if nonzero:
                w, v = np.linalg.eigh(h_static)
                self.u_static = np.ascontiguousarray(
                    (v * np.exp(-1j * self.dt * w)) @ v.conj().T)
                self.u_static_dag = np.ascontiguousarray(self.u_static.conj().T)
            else:
                self.u_static = None
                self.u_static_dag = None

        self.q_band = table.band("q")
        self.p_band = table.band("p")
        self.a_band = table.band("a")
        self._scratch = None
        self._rot = None

    def recentered(self, d_dense: np.ndarray, new_frame: FrameOffset,
                   refresh: bool) -> "StepContext":
        """Context for the frame reached by applying ``d_dense`` to the
        state: the static unitary transforms as U -> D U D^dag."""
        if refresh or self.u_static is None:
            return StepContext(self.params, new_frame, self.dt, self.dim)
        u_new = d_dense @ self.u_static @ d_dense.conj().T
        return StepContext(self.params, new_frame, self.dt, self.dim,
                           u_pair=(np.ascontiguousarray(u_new),
                                   np.ascontiguousarray(u_new.conj().T)))

    def scratch(self):
        """dim x dim work buffers, allocated on first use."""
        if self._scratch is None:
            self._scratch = tuple(
                np.empty((self.dim, self.dim), dtype=np.complex128) for _ in range(4))
        return self._scratch

    def rotated_quadratures(self):
        """U^dag q U and U^dag p U: the quadratures after the step unitary,
        used to read post-step means without applying U to the state."""
        if self._rot is None:
            if self.u_static is None:
                self._rot = (np.ascontiguousarray(self.table.q),
                             np.ascontiguousarray(self.table.p))
            else:
                q_rot = self.u_static_dag @ self.table.q @ self.u_static
                p_rot = self.u_static_dag @ self.table.p @ self.u_static
                self._rot = (np.ascontiguousarray(q_rot),
                             np.ascontiguousarray(p_rot))
        return self._rot

    def record_mean(self, rho: np.ndarray) -> float:
        """Tr[L rho + rho L^dag] = 2 Re Tr[L rho]."""
        return 2.0 * self.l_band.trace_with(rho).real

    def record_mean_vec(self, psi: np.ndarray) -> float:
        """Pure-state record mean 2 Re <psi|L|psi>."""
        return 2.0 * np.vdot(psi, _band_matvec(self.l_band, psi)).real

    def step_into(self, rho: np.ndarray, t: float, dy: float, dw: float,
                  out: np.ndarray) -> float:
        """One update of rho into ``out``; returns the normalization trace."""
        buf_b, buf_x, buf_c, _ = self.scratch()
        k = self.assemble_k(t, dy, dw)
        _kernels.band_left(self.k_offsets, k, rho, buf_b)
        _kernels.band_right_dag(self.k_offsets, k, buf_b, buf_x)
        if self.eta < 1.0:
            self.l_band.left(rho, buf_c)
            self.l_band.right_dag(buf_c, buf_b)  # buf_b now L rho L^dag
            buf_x += ((1.0 - self.eta) * self.dt) * buf_b
        if self.u_static is not None:
            np.matmul(self.u_static, buf_x, out=buf_c)
            np.matmul(buf_c, self.u_static_dag, out=buf_x)
        tr = float(np.trace(buf_x).real)
        if not math.isfinite(tr):
            raise NumericalOverflowError("non-finite normalization trace")
        if tr <= 1e-14:
            raise SingularStepError(
                f"normalization trace {tr:.3e}; decrease dt or enlarge the basis")
        _kernels.hermitize_scale(buf_x, 1.0 / tr)
        out[:, :] = buf_x
        return tr

    def step_vec(self, psi: np.ndarray, t: float, dy: float, dw: float) -> np.ndarray:
        """Pure-state update psi -> U K psi / norm (valid at eta = 1)."""
        k = self.assemble_k(t, dy, dw)
        phi = _band_matvec_raw(self.k_offsets, k, psi)
        if self.u_static is not None:
            phi = self.u_static @ phi
        nrm = float(np.linalg.norm(phi))
        if not math.isfinite(nrm):
            raise NumericalOverflowError("non-finite state norm")
        if nrm <= 1e-7:
            raise SingularStepError(
                f"state norm {nrm:.3e}; decrease dt or enlarge the basis")
        return phi / nrm


class PertContext(_KParts):
    """K ingredients for a frame shifted by (dq, dp), for Jacobian probes.

    The shifted static unitary is never rebuilt: it equals D^dag U D with
    D the (banded, fixed) displacement of the shift, so the post-step
    quadratures in the shifted frame come from conjugating the parent's
    rotated quadratures with D. Exact up to truncation-boundary residue.
    """

    def __init__(self, parent: StepContext, dq: float, dp: float,
                 d_band: BandedOperator):
        frame_k = FrameOffset(parent.frame.q0 + dq, parent.frame.p0 + dp)
        super().__init__(parent.params, frame_k, parent.dt, parent.table)
        self.parent = parent
        self.dq = dq
        self.dp = dp
        self.c_shift = (lindblad_constant(frame_k, parent.params)
                        - lindblad_constant(parent.frame, parent.params))
        self._d_band = d_band
        self.d_dense = d_band.to_dense()
        self.d_dense_dag = np.ascontiguousarray(self.d_dense.conj().T)
        self._mats = None

    def mean_mats(self):
        """Dense readout matrices in the shifted frame:
        q_rot_k = D^dag q_rot D - dq (same for p), plus the damping-channel
        sandwich L_k^dag m L_k needed when eta < 1."""
        if self._mats is None:
            q_rot, p_rot = self.parent.rotated_quadratures()
            ddag = self._d_band.dagger()
            mats = {}
            for name, m, shift in (("q", q_rot, self.dq), ("p", p_rot, self.dp)):
                w = ddag.left(m)
                w = ddag.right_dag(w)  # D^dag m D
                if shift != 0.0:
                    w = w - shift * np.eye(self.dim)
                mats[name] = np.ascontiguousarray(w)
            if self.eta < 1.0:
                ldag = self.l_band.dagger()
                for name in ("q", "p"):
                    ml = np.empty_like(mats[name])
                    _kernels.band_right_dag(ldag.offsets, ldag.drow,
                                            mats[name], ml)  # m L
                    ldml = np.empty_like(ml)
                    _kernels.band_left(ldag.offsets, ldag.drow, ml, ldml)
                    mats["Ld" + name + "L"] = ldml
            self._mats = mats
        return self._mats


def _band_matvec_raw(offsets, drow, x: np.ndarray) -> np.ndarray:
    """Banded matrix times vector."""
    n = x.shape[0]
    out = np.zeros_like(x)
    for b, k in enumerate(offsets):
        k = int(k)
        if k >= 0:
            out[: n - k] += drow[b, : n - k] * x[k:]
        else:
            out[-k:] += drow[b, -k:] * x[: n + k]
    return out


def _band_matvec(op: BandedOperator, x: np.ndarray) -> np.ndarray:
    return _band_matvec_raw(op.offsets, op.drow, x)


_CONTEXT_CACHE: dict[tuple, StepContext] = {}


def _get_context(params: ModelParams, frame: FrameOffset, dt: float,
                 dim: int) -> StepContext:
    """Small cache for the one-shot public step functions."""
    key = (params, frame, float(dt), dim)
    ctx = _CONTEXT_CACHE.get(key)
    if ctx is None:
        if len(_CONTEXT_CACHE) > 64:
            _CONTEXT_CACHE.clear()
        ctx = StepContext(params, frame, dt, dim)
        _CONTEXT_CACHE[key] = ctx
    return ctx


@dataclass
class StepInput:
    """Inputs of a single stochastic update."""

    rho: np.ndarray
    t: float
    dt: float
    dW: float
    frame: FrameOffset
    params: ModelParams


@dataclass
class StepOutput:
    """Updated state and the record increment it produced (or consumed)."""

    rho_next: np.ndarray
    dy: float


def rouchon_step(inp: StepInput) -> StepOutput:
    """Advance the conditioned state by one stochastic step."""
    if not (inp.dt > 0):
        raise ValueError("dt must be positive")
    if not math.isfinite(inp.dW):
        raise ValueError("dW must be finite")
    ctx = _get_context(inp.params, inp.frame, inp.dt, inp.rho.shape[0])
    u = ctx.sqrt_eta * ctx.record_mean(inp.rho) * ctx.dt
    dy = u + inp.dW
    dw_used = dy - u
    out = np.empty_like(inp.rho)
    ctx.step_into(np.ascontiguousarray(inp.rho), inp.t, dy, dw_used, out)
    return StepOutput(rho_next=out, dy=dy)


def deterministic_step(rho: np.ndarray, t: float, dt: float, frame: FrameOffset,
                       params: ModelParams) -> np.ndarray:
    """The dW = 0 update used for Lyapunov Jacobians.

    With dW = 0 the quadratic noise term contributes -(eta/2) L^2 dt and
    the record feedback term eta L Tr[L rho + rho L^dag] dt remains; both
    are kept (this is not the ensemble-average evolution unless eta = 0).
    """
    return rouchon_step(StepInput(rho=rho, t=t, dt=dt, dW=0.0, frame=frame,
                                  params=params)).rho_next


def filter_step(rho_f: np.ndarray, dy: float, t: float, dt: float,
                frame_f: FrameOffset, filter_params: ModelParams) -> StepOutput:
    """Assimilate one record increment into a filter state.

    The innovation dW_f = dy - sqrt(eta_f) Tr[L_f rho_f + rho_f L_f^dag] dt
    is reconstructed under the filter's own parameters; with matched
    parameters and state this reproduces the generating step exactly.
    """
    ctx = _get_context(filter_params, frame_f, dt, rho_f.shape[0])
    u = ctx.sqrt_eta * ctx.record_mean(rho_f) * ctx.dt
    dw_f = dy - u
    out = np.empty_like(rho_f)
    ctx.step_into(np.ascontiguousarray(rho_f), t, dy, dw_f, out)
    return StepOutput(rho_next=out, dy=dy)


def lindblad_rk4_step(rho: np.ndarray, t: float, dt: float, frame: FrameOffset,
                      params: ModelParams) -> np.ndarray:
    """Classical 4th-order step of the unconditioned master equation

        drho/dt = -i[H, rho] + L rho L^dag - (L^dag L rho + rho L^dag L)/2

    used as a cross-validation oracle for the eta = 0 ensemble evolution.
    Being fully explicit it inherits the usual stability bound: use basis
    sizes with dt * spectral-spread(H) inside the RK4 stability region.
    """
    ctx = _get_context(params, frame, dt, rho.shape[0])
    table = ctx.table
    static, _ = hamiltonian_static_coefficients(frame, params)
    h_off = np.arange(-4, 5, dtype=np.int64)
    hs_pad = BandedOperator.combine(
        ctx.dim, [(c, table.band(name)) for name, c in static.items()]
    ).padded_to(h_off)
    dr_pad = drive_operator_banded(frame, table).padded_to(h_off)
    l_band = ctx.l_band
    ldl = ctx.ldl_band

    def liouville(sigma: np.ndarray, ts: float) -> np.ndarray:
        h = BandedOperator(ctx.dim, h_off,
                           hs_pad + drive_coefficient(ts, params) * dr_pad)
        a = h.left(sigma)
        comm = a - a.conj().T
        lr = l_band.right_dag(l_band.left(sigma))
        d = ldl.left(sigma)
        return -1j * comm + lr - 0.5 * (d + d.conj().T)

    k1 = liouville(rho, t)
    k2 = liouville(rho + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = liouville(rho + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = liouville(rho + dt * k3, t + dt)
    out = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericalOverflowError("non-finite state in RK4 step")
    return hermitize(out)


@dataclass(frozen=True)
class StepSchedule:
    """Trajectory loop configuration."""

    dt: float
    n_steps: int
    recenter: RecenterPolicy = field(default_factory=RecenterPolicy)
    output_stride: int = 1

    def __post_init__(self):
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be >= 0")
        if self.output_stride < 1:
            raise ValueError("output_stride must be >= 1")


@dataclass
class TrajectoryRecord:
    """Sampled time series of one trajectory.

    All series have equal length; means are global (local mean plus frame
    offset). ``dy`` holds the record increment of the sampled step (0 for
    the initial sample). ``record`` optionally holds the full per-step
    increment stream for filter replay.
    """

    times: np.ndarray
    dy: np.ndarray
    mean_q: np.ndarray
    mean_p: np.ndarray
    purity: np.ndarray
    q0: np.ndarray
    p0: np.ndarray
    seed: tuple[int, int]
    dim: int
    max_tail_population: float = 0.0
    record: np.ndarray | None = None


def rng_for_seed(base_seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (base_seed, stream): independent
    streams for parallel trajectories, reproducible by construction."""
    key = (int(stream) << 64) | (int(base_seed) & ((1 << 64) - 1))
    return np.random.Generator(np.random.Philox(key=key))


# fresh diagonalization every this many displacement-conjugated recenters
_U_REFRESH_EVERY = 8


class _DenseLane:
    """Density-matrix propagation (any eta)."""

    kind = "dense"

    def __init__(self, rho0: np.ndarray, frame: FrameOffset, params: ModelParams,
                 dt: float):
        self.rho = np.ascontiguousarray(rho0, dtype=np.complex128).copy()
        self.frame = frame
        self.params = params
        self.dt = dt
        self.ctx = StepContext(params, frame, dt, rho0.shape[0])
        self._recenters = 0

    def record_mean(self) -> float:
        return self.ctx.record_mean(self.rho)

    def step(self, t: float, dy: float, dw: float) -> None:
        self.ctx.step_into(self.rho, t, dy, dw, self.rho)

    def maybe_recenter(self, policy: RecenterPolicy) -> None:
        a_loc = local_mean_amplitude(self.rho)
        if abs(a_loc) > policy.threshold:
            d = displacement(-a_loc, self.rho.shape[0])
            self.rho = hermitize(d @ self.rho @ d.conj().T)
            self.frame = FrameOffset(
                self.frame.q0 + math.sqrt(2.0) * a_loc.real,
                self.frame.p0 + math.sqrt(2.0) * a_loc.imag)
            self._recenters += 1
            self.ctx = self.ctx.recentered(
                d, self.frame, refresh=self._recenters % _U_REFRESH_EVERY == 0)

    def means_global(self) -> tuple[float, float]:
        return (self.ctx.q_band.trace_with(self.rho).real + self.frame.q0,
                self.ctx.p_band.trace_with(self.rho).real + self.frame.p0)

    def purity(self) -> float:
        return purity(self.rho)

    def tail(self, levels: int) -> float:
        return tail_population(self.rho, levels)

    def density(self) -> np.ndarray:
        return self.rho.copy()

    def det_mean_responses(self, t: float, perts):
        """Global mean responses of one deterministic step for each
        perturbation context.

        Displacing the state by (dq, dp) and stepping is unitarily
        equivalent to stepping the undisplaced state with the operator set
        re-expanded around the shifted frame (exact polynomial algebra),
        so only post-step means are needed and no displaced state is
        built: with B = K_k rho and X = B K_k^dag + (1-eta) dt L_k rho
        L_k^dag, the response is Tr[m_k X] / Tr[X] + offsets, where m_k is
        the shifted-frame rotated quadrature.
        """
        ctx = self.ctx
        rho = self.rho
        eta = ctx.eta
        dt = ctx.dt
        t1 = 2.0 * ctx.l_band.trace_with(rho).real
        buf = ctx.scratch()[3]
        if eta < 1.0:
            w = (1.0 - eta) * dt
            rho_t = np.ascontiguousarray(rho.T)
        out = []
        for pctx in perts:
            mats = pctx.mean_mats()
            t1_k = t1 + 2.0 * pctx.c_shift.real
            dy_k = pctx.sqrt_eta * t1_k * dt
            k = pctx.assemble_k(t, dy_k, 0.0)
            _kernels.band_left(pctx.k_offsets, k, rho, buf)
            bt = np.ascontiguousarray(buf.T)
            den, num_q, num_p = _kernels.k_mean_traces(
                pctx.k_offsets, k, bt, mats["q"], mats["p"])
            den = den.real
            num_q = num_q.real
            num_p = num_p.real
            if eta < 1.0:
                den += w * pctx.ldl_band.trace_with(rho).real
                num_q += w * np.sum(mats["LdqL"] * rho_t).real
                num_p += w * np.sum(mats["LdpL"] * rho_t).real
            out.append((num_q / den + self.frame.q0 + pctx.dq,
                        num_p / den + self.frame.p0 + pctx.dp))
        return out


class _PureLane:
    """State-vector propagation; exact at eta = 1 (single Kraus operator)."""

    kind = "pure"

    def __init__(self, psi0: np.ndarray, frame: FrameOffset, params: ModelParams,
                 dt: float):
        self.psi = np.ascontiguousarray(psi0, dtype=np.complex128).copy()
        self.psi /= np.linalg.norm(self.psi)
        self.frame = frame
        self.params = params
        self.dt = dt
        self.ctx = StepContext(params, frame, dt, psi0.shape[0])
        self._recenters = 0

    def record_mean(self) -> float:
        return self.ctx.record_mean_vec(self.psi)

    def step(self, t: float, dy: float, dw: float) -> None:
        self.psi = self.ctx.step_vec(self.psi, t, dy, dw)

    def maybe_recenter(self, policy: RecenterPolicy) -> None:
        ctx = self.ctx
        a_loc = complex(np.vdot(self.psi, _band_matvec(ctx.a_band, self.psi)))
        if abs(a_loc) > policy.threshold:
            d = displacement(-a_loc, self.psi.shape[0])
            self.psi = d @ self.psi
            self.psi /= np.linalg.norm(self.psi)
            q_loc = math.sqrt(2.0) * a_loc.real
            p_loc = math.sqrt(2.0) * a_loc.imag
            self.frame = FrameOffset(self.frame.q0 + q_loc,
                                     self.frame.p0 + p_loc)
            self._recenters += 1
            self.ctx = self.ctx.recentered(
                d, self.frame, refresh=self._recenters % _U_REFRESH_EVERY == 0)

    def means_global(self) -> tuple[float, float]:
        psi = self.psi
        mq = np.vdot(psi, _band_matvec(self.ctx.q_band, psi)).real
        mp = np.vdot(psi, _band_matvec(self.ctx.p_band, psi)).real
        return mq + self.frame.q0, mp + self.frame.p0

    def purity(self) -> float:
        return 1.0

    def tail(self, levels: int) -> float:
        return float(np.sum(np.abs(self.psi[-levels:]) ** 2))

    def density(self) -> np.ndarray:
        return np.outer(self.psi, self.psi.conj())

    def det_mean_responses(self, t: float, perts):
        """Pure-state version: phi_k = (D^dag U D) K_k psi with banded D,
        then direct mean readout from phi_k."""
        ctx = self.ctx
        psi = self.psi
        dt = ctx.dt
        t1 = ctx.record_mean_vec(psi)
        out = []
        for pctx in perts:
            t1_k = t1 + 2.0 * pctx.c_shift.real
            dy_k = pctx.sqrt_eta * t1_k * dt
            k = pctx.assemble_k(t, dy_k, 0.0)
            phi = _band_matvec_raw(pctx.k_offsets, k, psi)
            if ctx.u_static is not None:
                phi = pctx.d_dense_dag @ (ctx.u_static @ (pctx.d_dense @ phi))
            den = np.vdot(phi, phi).real
            mq = np.vdot(phi, _band_matvec(ctx.q_band, phi)).real
            mp = np.vdot(phi, _band_matvec(ctx.p_band, phi)).real
            out.append((mq / den + self.frame.q0 + pctx.dq,
                        mp / den + self.frame.p0 + pctx.dp))
        return out


def _make_lane(rho0: np.ndarray, frame: FrameOffset, params: ModelParams,
               dt: float):
    """Pick the pure-state lane when it is exact: eta = 1 and rank-1 input."""
    if params.eta == 1.0:
        w, v = np.linalg.eigh(hermitize(rho0))
        if w[-1] >= 1.0 - 1e-12:
            return _PureLane(v[:, -1], frame, params, dt)
    return _DenseLane(rho0, frame, params, dt)


def simulate_trajectory(rho0: np.ndarray, frame0: FrameOffset, params: ModelParams,
                        schedule: StepSchedule, seed: int | tuple[int, int] = 0,
                        observer=None, record_full: bool = False,
                        replay_record: np.ndarray | None = None) -> TrajectoryRecord:
    """Integrate one trajectory, recentering the basis as the state moves.

    dW increments are drawn from the seeded counter-based generator unless
    ``replay_record`` provides a stored stream of dy increments, in which
    case the run acts as a filter assimilating that record.

    ``observer``, when given, must expose ``observe(lane, t)`` (called with
    the pre-step state) and ``finish(t)``.
    """
    if isinstance(seed, tuple):
        base_seed, stream = seed
    else:
        base_seed, stream = int(seed), 0
    dim = rho0.shape[0]
    dt = schedule.dt
    n_steps = schedule.n_steps
    policy = schedule.recenter
    if replay_record is not None and len(replay_record) < n_steps:
        raise ValueError("replay record shorter than the requested step count")

    lane = _make_lane(rho0, frame0, params, dt)
    rng = None if replay_record is not None else rng_for_seed(base_seed, stream)

    mq, mp = lane.means_global()
    times = [0.0]
    dys = [0.0]
    mean_q = [mq]
    mean_p = [mp]
    purities = [lane.purity()]
    q0s = [lane.frame.q0]
    p0s = [lane.frame.p0]
    full = np.empty(n_steps) if record_full else None
    max_tail = lane.tail(policy.tail_levels)
    tail_warned = False

    block = 4096
    noise = np.empty(0)
    noise_pos = 0
    sqrt_dt = math.sqrt(dt)

    for n in range(n_steps):
        t = n * dt
        if observer is not None:
            observer.observe(lane, t)

        u = lane.ctx.sqrt_eta * lane.record_mean() * dt
        if replay_record is not None:
            dy = float(replay_record[n])
        else:
            if noise_pos >= len(noise):
                noise = rng.standard_normal(block) * sqrt_dt
                noise_pos = 0
            dy = u + noise[noise_pos]
            noise_pos += 1
        dw_used = dy - u

        try:
            lane.step(t, dy, dw_used)
        except (SingularStepError, NumericalOverflowError) as exc:
            raise type(exc)(str(exc), step=n) from None
        if full is not None:
            full[n] = dy

        lane.maybe_recenter(policy)

        if (n + 1) % schedule.output_stride == 0 or n == n_steps - 1:
            pur = lane.purity()
            if not math.isfinite(pur):
                raise NumericalOverflowError("non-finite state", step=n)
            tail = lane.tail(policy.tail_levels)
            max_tail = max(max_tail, tail)
            if tail > 100.0 * policy.tail_tolerance:
                raise BasisTooSmallError(
                    f"top-level population {tail:.3e}; enlarge the basis", step=n)
            if tail > policy.tail_tolerance and not tail_warned:
                warnings.warn(
                    f"step {n}: top-level population {tail:.3e} exceeds "
                    f"{policy.tail_tolerance:.1e}", RuntimeWarning, stacklevel=2)
                tail_warned = True
            mq, mp = lane.means_global()
            times.append((n + 1) * dt)
            dys.append(dy)
            mean_q.append(mq)
            mean_p.append(mp)
            purities.append(pur)
            q0s.append(lane.frame.q0)
            p0s.append(lane.frame.p0)

    if observer is not None:
        observer.finish(n_steps * dt)

    return TrajectoryRecord(
        times=np.array(times), dy=np.array(dys), mean_q=np.array(mean_q),
        mean_p=np.array(mean_p), purity=np.array(purities),
        q0=np.array(q0s), p0=np.array(p0s), seed=(base_seed, stream),
        dim=dim, max_tail_population=max_tail, record=full)
