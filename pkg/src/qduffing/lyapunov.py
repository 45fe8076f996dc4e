"""Lyapunov exponent estimation for quantum trajectories and the
classical oracle.

Along a trajectory, the tangent dynamics of the phase-space means is
probed with finite differences of the deterministic (dW = 0) one-step
map: the state is displaced by +/- epsilon in the scaled coordinates
(x, y) = (beta <q>, beta <p>), advanced one deterministic step, and the
response of the scaled means gives a 2x2 Jacobian. Per-step Jacobians
are multiplied over a short stride and the tangent frame is then
re-orthonormalized (Gram-Schmidt), accumulating log stretching factors;
the exponents are the accumulated logs per unit time after a burn-in.

The classical oracle runs the same accumulation over the exact tangent
propagator of the classical flow, integrated jointly with the state by a
4th-order one-step method. Both pipelines share the Gram-Schmidt update
and the finalization, so they agree exactly on synthetic inputs.

The third exponent of the driven system (along the drive phase) is zero
by construction and is not computed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .duffing_model import FrameOffset, ModelParams
from .errors import DegenerateTangentError, JacobianError
from .fock_linalg import BandedOperator, displacement
from .sme_engine import (
    PertContext,
    StepContext,
    StepSchedule,
    TrajectoryRecord,
    deterministic_step,
    get_table,
    simulate_trajectory,
)

TWO_PI = 2.0 * math.pi


@dataclass
class LyapunovAccumulator:
    """Orthonormal tangent frame plus accumulated log stretching factors.

    ``elapsed`` is total trajectory time seen; spans falling before
    ``burn_in`` update the tangent frame but are not accumulated.
    """

    tangent: np.ndarray = field(default_factory=lambda: np.eye(2))
    log_sums: np.ndarray = field(default_factory=lambda: np.zeros(2))
    elapsed: float = 0.0
    burn_in: float = 0.0
    accum_time: float = 0.0


def gram_schmidt_update(acc: LyapunovAccumulator, jmat: np.ndarray,
                        span: float) -> LyapunovAccumulator:
    """Push the tangent frame through jmat and re-orthonormalize.

    ``span`` is the trajectory time the Jacobian covers; log stretching
    factors are accumulated only once ``acc.elapsed`` has passed the
    burn-in.
    """
    jmat = np.asarray(jmat, dtype=np.float64)
    if not np.all(np.isfinite(jmat)):
        raise JacobianError("non-finite Jacobian entries")
    accumulate = acc.elapsed >= acc.burn_in - 1e-12
    r1, r2 = _kernels.gs_step(acc.tangent, jmat, acc.log_sums, accumulate)
    if r1 < 1e-300 or r2 < 1e-300:
        raise DegenerateTangentError(
            f"tangent frame collapsed (r1={r1:.3e}, r2={r2:.3e})")
    acc.elapsed += span
    if accumulate:
        acc.accum_time += span
    return acc


def finalize(acc: LyapunovAccumulator) -> tuple[float, float]:
    """Exponents per unit time, sorted descending."""
    if acc.accum_time <= 0.0:
        raise ValueError("no accumulation time past burn-in")
    lams = acc.log_sums / acc.accum_time
    return float(max(lams)), float(min(lams))


@dataclass(frozen=True)
class LyapunovSchedule:
    """Finite-difference and renormalization choices for quantum runs.

    epsilon is the perturbation size in the scaled coordinates, so its
    meaning is beta-independent across a sweep.
    """

    epsilon: float = 1e-3
    renorm_stride: int = 10
    burn_in_cycles: float = 10.0

    def __post_init__(self):
        if not (self.epsilon > 0):
            raise ValueError("epsilon must be > 0")
        if self.renorm_stride < 1:
            raise ValueError("renorm_stride must be >= 1")
        if self.burn_in_cycles < 0:
            raise ValueError("burn_in_cycles must be >= 0")


def local_jacobian(rho: np.ndarray, t: float, dt: float, frame: FrameOffset,
                   params: ModelParams, epsilon: float = 1e-3) -> np.ndarray:
    """One-step Jacobian of the deterministic map on the scaled means.

    For each signed unit perturbation +/- epsilon in x and y, the state is
    displaced by the matching phase-space shift (delta q or delta p of
    epsilon / beta, applied as D(delta_alpha) with
    delta_alpha = (delta_q + i delta_p)/sqrt(2)), advanced one
    deterministic step, and the global means are read back in scaled
    coordinates; columns are central differences over 2 epsilon.
    """
    if not (epsilon > 0):
        raise ValueError("epsilon must be > 0")
    dim = rho.shape[0]
    table = get_table(dim)
    beta = params.beta
    d_local = epsilon / beta
    shifts = [(d_local, 0.0), (-d_local, 0.0), (0.0, d_local), (0.0, -d_local)]
    scaled = []
    for dq, dp in shifts:
        alpha = complex(dq, dp) / math.sqrt(2.0)
        u = displacement(alpha, dim)
        rho_k = u @ rho @ u.conj().T
        rho_next = deterministic_step(rho_k, t, dt, frame, params)
        mq = np.sum(table.q * rho_next.T).real + frame.q0
        mp = np.sum(table.p * rho_next.T).real + frame.p0
        scaled.append((beta * mq, beta * mp))
    jmat = np.array([
        [(scaled[0][0] - scaled[1][0]), (scaled[2][0] - scaled[3][0])],
        [(scaled[0][1] - scaled[1][1]), (scaled[2][1] - scaled[3][1])],
    ]) / (2.0 * epsilon)
    if not np.all(np.isfinite(jmat)):
        raise JacobianError("non-finite finite-difference Jacobian")
    return jmat


class LyapunovTracker:
    """Trajectory observer accumulating the tangent dynamics on the fly.

    The per-step Jacobian is evaluated without building displaced copies
    of the state: displacing the state by delta and evolving is unitarily
    equivalent to evolving the undisplaced state with the Hamiltonian and
    Lindblad operator re-expanded around a frame shifted by delta (the
    frame substitution is exact polynomial algebra). Each perturbation is
    therefore one deterministic step under a shifted-frame operator set,
    and only the post-step means are needed. Agreement with
    ``local_jacobian`` is covered by the tests.
    """

    def __init__(self, params: ModelParams, dt: float,
                 schedule: LyapunovSchedule = LyapunovSchedule()):
        self.params = params
        self.dt = float(dt)
        self.schedule = schedule
        self.acc = LyapunovAccumulator(burn_in=schedule.burn_in_cycles * TWO_PI)
        self.product = np.eye(2)
        self.steps_in_stride = 0
        self.series_t: list[float] = []
        self.series_lp: list[float] = []
        self.series_lm: list[float] = []
        self._ctx = None
        self._perts = None
        self._dbands = None
        d = schedule.epsilon / params.beta
        self._shifts = ((d, 0.0), (-d, 0.0), (0.0, d), (0.0, -d))

    def _rebuild(self, ctx: StepContext):
        self._ctx = ctx
        if self._dbands is None:
            self._dbands = []
            for dq, dp in self._shifts:
                alpha = complex(dq, dp) / math.sqrt(2.0)
                dense = displacement(alpha, ctx.dim)
                self._dbands.append(BandedOperator.from_dense(dense, tol=1e-14))
        self._perts = [PertContext(ctx, dq, dp, db)
                       for (dq, dp), db in zip(self._shifts, self._dbands)]

    def observe(self, lane, t: float):
        if lane.ctx is not self._ctx:
            self._rebuild(lane.ctx)
        responses = lane.det_mean_responses(t, self._perts)
        beta = self.params.beta
        x = [beta * mq for mq, _ in responses]
        y = [beta * mp for _, mp in responses]
        eps2 = 2.0 * self.schedule.epsilon
        jmat = np.array([
            [x[0] - x[1], x[2] - x[3]],
            [y[0] - y[1], y[2] - y[3]],
        ]) / eps2
        if not np.all(np.isfinite(jmat)):
            raise JacobianError(f"non-finite Jacobian at t={t:.6g}")
        self.product = jmat @ self.product
        self.steps_in_stride += 1
        if self.steps_in_stride >= self.schedule.renorm_stride:
            self._flush(t + self.dt)

    def _flush(self, t_now: float):
        if self.steps_in_stride == 0:
            return
        span = self.steps_in_stride * self.dt
        gram_schmidt_update(self.acc, self.product, span)
        self.product = np.eye(2)
        self.steps_in_stride = 0
        if self.acc.accum_time > 0.0:
            lp, lm = finalize(self.acc)
            self.series_t.append(t_now)
            self.series_lp.append(lp)
            self.series_lm.append(lm)

    def finish(self, t_final: float):
        self._flush(t_final)

    def result(self) -> tuple[float, float]:
        return finalize(self.acc)


@dataclass
class QuantumLyapunovResult:
    """Exponents plus the running-estimate series and the trajectory."""

    lambda_plus: float
    lambda_minus: float
    series_t: np.ndarray
    series_lambda_plus: np.ndarray
    series_lambda_minus: np.ndarray
    record: TrajectoryRecord


class _FanoutObserver:
    def __init__(self, observers):
        self.observers = observers

    def observe(self, lane, t):
        for ob in self.observers:
            ob.observe(lane, t)

    def finish(self, t):
        for ob in self.observers:
            ob.finish(t)


def quantum_lyapunov(rho0: np.ndarray, frame0: FrameOffset, params: ModelParams,
                     sim_schedule: StepSchedule,
                     lyap_schedule: LyapunovSchedule = LyapunovSchedule(),
                     seed: int | tuple[int, int] = 0,
                     record_full: bool = False,
                     replay_record: np.ndarray | None = None,
                     extra_observer=None) -> QuantumLyapunovResult:
    """Run one trajectory while estimating its two Lyapunov exponents."""
    tracker = LyapunovTracker(params, sim_schedule.dt, lyap_schedule)
    observer = (tracker if extra_observer is None
                else _FanoutObserver((tracker, extra_observer)))
    record = simulate_trajectory(rho0, frame0, params, sim_schedule, seed,
                                 observer=observer, record_full=record_full,
                                 replay_record=replay_record)
    lp, lm = tracker.result()
    return QuantumLyapunovResult(
        lambda_plus=lp, lambda_minus=lm,
        series_t=np.array(tracker.series_t),
        series_lambda_plus=np.array(tracker.series_lp),
        series_lambda_minus=np.array(tracker.series_lm),
        record=record)


def write_series_csv(path, result: QuantumLyapunovResult) -> None:
    """Running-estimate series as CSV (t, lambda_plus, lambda_minus)."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("t,lambda_plus_running,lambda_minus_running\n")
        for t, lp, lm in zip(result.series_t, result.series_lambda_plus,
                             result.series_lambda_minus):
            f.write(f"{float(t)!r},{float(lp)!r},{float(lm)!r}\n")


def classical_lyapunov(params: ModelParams, total_time: float,
                       dt: float = TWO_PI / 400.0, burn_in: float | None = None,
                       renorm_stride: int = 10,
                       initial: tuple[float, float] = (1.0, 0.0)) -> tuple[float, float]:
    """Benettin-style exponents of the scaled classical flow.

    Integrates the flow jointly with its exact tangent propagator
    (classical_jacobian) by a 4th-order one-step method, renormalizing the
    tangent frame every ``renorm_stride`` steps through the same
    Gram-Schmidt accumulation as the quantum pipeline. Converged runs
    satisfy lambda_plus + lambda_minus = -2 gamma (the flow divergence).
    """
    if params.hamiltonian != "duffing":
        raise ValueError("classical oracle is defined for the duffing model")
    if total_time <= 0 or dt <= 0:
        raise ValueError("total_time and dt must be positive")
    n_steps = int(round(total_time / dt))
    if burn_in is None:
        burn_in = min(20.0 * TWO_PI, total_time / 4.0)
    acc = LyapunovAccumulator(burn_in=burn_in)
    x, y = float(initial[0]), float(initial[1])
    g, gamma, phi = params.g, params.gamma, params.drive_phase
    done = 0
    jmat = np.empty((2, 2))
    while done < n_steps:
        k = min(renorm_stride, n_steps - done)
        x, y, w00, w01, w10, w11 = _kernels.classical_stride(
            x, y, done * dt, dt, k, g, gamma, phi)
        jmat[0, 0] = w00
        jmat[0, 1] = w01
        jmat[1, 0] = w10
        jmat[1, 1] = w11
        gram_schmidt_update(acc, jmat, k * dt)
        done += k
    return finalize(acc)


def integrate_classical(params: ModelParams, total_time: float,
                        dt: float = TWO_PI / 400.0,
                        initial: tuple[float, float] = (1.0, 0.0),
                        sample_stride: int = 1):
    """Classical trajectory samples (t, x, y) after every sample_stride steps."""
    if params.hamiltonian != "duffing":
        raise ValueError("classical oracle is defined for the duffing model")
    n_steps = int(round(total_time / dt))
    xs = np.empty(n_steps)
    ys = np.empty(n_steps)
    _kernels.classical_path(float(initial[0]), float(initial[1]), 0.0, dt,
                            n_steps, params.g, params.gamma,
                            params.drive_phase, xs, ys)
    ts = dt * np.arange(1, n_steps + 1)
    sl = slice(sample_stride - 1, None, sample_stride)
    return ts[sl], xs[sl], ys[sl]
