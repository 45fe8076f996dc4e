"""Gram-Schmidt accumulation, Jacobians, and the classical oracle."""

import math

import mpmath
import numpy as np
import pytest

from qduffing.duffing_model import FrameOffset, ModelParams, classical_jacobian
from qduffing.errors import DegenerateTangentError
from qduffing.fock_linalg import coherent_dm, vacuum_dm
from qduffing.lyapunov import (
    TWO_PI,
    LyapunovAccumulator,
    LyapunovSchedule,
    LyapunovTracker,
    classical_lyapunov,
    finalize,
    gram_schmidt_update,
    integrate_classical,
    local_jacobian,
    quantum_lyapunov,
)
from qduffing.moving_basis import RecenterPolicy
from qduffing.sme_engine import StepSchedule, _make_lane


def test_gs_diagonal_update():
    acc = LyapunovAccumulator()
    gram_schmidt_update(acc, np.diag([2.0, 0.5]), span=1.0)
    assert abs(acc.log_sums[0] - math.log(2.0)) < 1e-14
    assert abs(acc.log_sums[1] - math.log(0.5)) < 1e-14


def test_gs_rotation_is_isometry():
    acc = LyapunovAccumulator()
    th = 0.7
    rot = np.array([[math.cos(th), -math.sin(th)],
                    [math.sin(th), math.cos(th)]])
    for _ in range(10):
        gram_schmidt_update(acc, rot, span=0.1)
    assert np.max(np.abs(acc.log_sums)) < 1e-12


def test_gs_tangent_stays_orthonormal():
    rng = np.random.default_rng(0)
    acc = LyapunovAccumulator()
    for _ in range(100):
        gram_schmidt_update(acc, rng.standard_normal((2, 2)), span=0.1)
        g = acc.tangent.T @ acc.tangent
        assert np.max(np.abs(g - np.eye(2))) < 1e-12


def test_gs_burn_in_gating():
    acc = LyapunovAccumulator(burn_in=1.0)
    gram_schmidt_update(acc, np.diag([2.0, 0.5]), span=0.5)
    assert np.all(acc.log_sums == 0.0)
    assert acc.accum_time == 0.0
    gram_schmidt_update(acc, np.diag([2.0, 0.5]), span=0.5)
    assert np.all(acc.log_sums == 0.0)
    gram_schmidt_update(acc, np.diag([2.0, 0.5]), span=0.5)
    assert abs(acc.log_sums[0] - math.log(2.0)) < 1e-14
    assert abs(acc.accum_time - 0.5) < 1e-14


def test_gs_degenerate_tangent():
    acc = LyapunovAccumulator()
    with pytest.raises(DegenerateTangentError):
        gram_schmidt_update(acc, np.zeros((2, 2)), span=1.0)


def test_gs_matches_extended_precision_oracle():
    # random 2x2 products against the same accumulation in 50-digit
    # arithmetic
    rng = np.random.default_rng(42)
    jmats = [rng.standard_normal((2, 2)) for _ in range(50)]

    acc = LyapunovAccumulator()
    for j in jmats:
        gram_schmidt_update(acc, j, span=1.0)

    mpmath.mp.dps = 50
    v1 = [mpmath.mpf(1), mpmath.mpf(0)]
    v2 = [mpmath.mpf(0), mpmath.mpf(1)]
    logs = [mpmath.mpf(0), mpmath.mpf(0)]
    for j in jmats:
        w1 = [j[0, 0] * v1[0] + j[0, 1] * v1[1], j[1, 0] * v1[0] + j[1, 1] * v1[1]]
        w2 = [j[0, 0] * v2[0] + j[0, 1] * v2[1], j[1, 0] * v2[0] + j[1, 1] * v2[1]]
        r1 = mpmath.sqrt(w1[0] ** 2 + w1[1] ** 2)
        u1 = [w1[0] / r1, w1[1] / r1]
        proj = u1[0] * w2[0] + u1[1] * w2[1]
        o2 = [w2[0] - proj * u1[0], w2[1] - proj * u1[1]]
        r2 = mpmath.sqrt(o2[0] ** 2 + o2[1] ** 2)
        v1, v2 = u1, [o2[0] / r2, o2[1] / r2]
        logs[0] += mpmath.log(r1)
        logs[1] += mpmath.log(r2)
    assert abs(acc.log_sums[0] - float(logs[0])) < 1e-8
    assert abs(acc.log_sums[1] - float(logs[1])) < 1e-8


def test_finalize_values_and_ordering():
    acc = LyapunovAccumulator(log_sums=np.array([2.0, -3.0]), accum_time=10.0)
    lp, lm = finalize(acc)
    assert abs(lp - 0.2) < 1e-15
    assert abs(lm + 0.3) < 1e-15
    acc = LyapunovAccumulator(log_sums=np.array([-3.0, 2.0]), accum_time=10.0)
    lp, lm = finalize(acc)
    assert lp >= lm
    with pytest.raises(ValueError):
        finalize(LyapunovAccumulator())


def test_finalize_constant_diagonal_exact():
    a_rate, b_rate, dt = 0.31, -0.17, 0.01
    acc = LyapunovAccumulator()
    j = np.diag([math.exp(a_rate * dt), math.exp(b_rate * dt)])
    for _ in range(200):
        gram_schmidt_update(acc, j, span=dt)
    lp, lm = finalize(acc)
    assert abs(lp - a_rate) < 1e-12
    assert abs(lm - b_rate) < 1e-12


def test_shared_pipeline_constant_j():
    # quantum-style and classical-style accumulation share the update and
    # finalize; feed both the same synthetic constant Jacobian
    dt = 0.02
    j = np.diag([math.exp(0.2 * dt), math.exp(-0.5 * dt)])
    acc1 = LyapunovAccumulator()
    acc2 = LyapunovAccumulator()
    for _ in range(100):
        gram_schmidt_update(acc1, j, span=dt)
    for _ in range(10):
        j10 = np.linalg.matrix_power(j, 10)
        gram_schmidt_update(acc2, j10, span=10 * dt)
    assert np.allclose(finalize(acc1), finalize(acc2), atol=1e-12)
    assert np.allclose(finalize(acc1), (0.2, -0.5), atol=1e-12)


# -- classical oracle ----------------------------------------------------------

def classical_params(g=0.3, gamma=0.125):
    return ModelParams(beta=1.0, g=g, gamma=gamma, eta=1.0)


def test_classical_lyapunov_chaotic_regime():
    lp, lm = classical_lyapunov(classical_params(), 500 * TWO_PI)
    assert lp > 0.02
    assert abs(lp + lm + 0.25) < 0.01


def test_classical_lyapunov_undriven_attractor():
    lp, _ = classical_lyapunov(classical_params(g=0.0), 100 * TWO_PI)
    assert lp < 0.0


def test_classical_lyapunov_step_insensitivity():
    # halving dt perturbs the chaotic trajectory, so the exponents differ
    # by the finite-time estimator scatter; the horizon is long enough to
    # push that scatter below the tolerance
    total = 20000 * TWO_PI
    lp1, lm1 = classical_lyapunov(classical_params(), total, dt=TWO_PI / 400)
    lp2, lm2 = classical_lyapunov(classical_params(), total, dt=TWO_PI / 800)
    assert abs(lp1 - lp2) <= 2e-3
    assert abs(lm1 - lm2) <= 2e-3


def test_integrate_classical_deterministic():
    t1, x1, y1 = integrate_classical(classical_params(), 10 * TWO_PI)
    t2, x2, y2 = integrate_classical(classical_params(), 10 * TWO_PI)
    assert np.array_equal(x1, x2)
    assert np.array_equal(y1, y2)
    assert len(t1) == len(x1) == len(y1)


# -- quantum Jacobians ---------------------------------------------------------

def test_local_jacobian_harmonic_rotation():
    # pure kinetic-plus-harmonic variant with negligible damping: one step
    # rotates phase space by dt
    dt = TWO_PI / 3000
    params = ModelParams(beta=1.0, g=0.0, gamma=1e-30, eta=1.0,
                         hamiltonian="harmonic")
    rho = coherent_dm(0.4 + 0.1j, 40)
    j = local_jacobian(rho, 0.0, dt, FrameOffset(), params)
    rot = np.array([[math.cos(dt), math.sin(dt)],
                    [-math.sin(dt), math.cos(dt)]])
    assert np.max(np.abs(j - rot)) < 1e-4


def test_local_jacobian_epsilon_stability():
    dt = TWO_PI / 3000
    params = ModelParams(beta=0.3, g=0.3, gamma=0.125, eta=1.0)
    rho = coherent_dm(0.2, 80)
    frame = FrameOffset(1 / 0.3, 0.0)
    j1 = local_jacobian(rho, 0.4, dt, frame, params, epsilon=1e-3)
    j2 = local_jacobian(rho, 0.4, dt, frame, params, epsilon=5e-4)
    assert np.max(np.abs(j1 - j2)) <= 1e-4


def test_local_jacobian_classical_correspondence_single_point():
    beta = 0.05
    dt = TWO_PI / 6000
    params = ModelParams(beta=beta, g=0.3, gamma=0.125, eta=1.0)
    frame = FrameOffset(1 / beta, 0.0)
    rho = vacuum_dm(160)
    j = local_jacobian(rho, 0.0, dt, frame, params)
    jc = classical_jacobian((1.0, 0.0), 0.0, params)
    assert np.max(np.abs(j - (np.eye(2) + dt * jc))) < 2e-3


@pytest.mark.parametrize("eta", [1.0, 0.4])
def test_tracker_matches_public_jacobian(eta):
    # the fast shifted-frame evaluation equals the displacement-based
    # definition
    params = ModelParams(beta=0.3, g=0.3, gamma=0.125, eta=eta)
    dt = TWO_PI / 3000
    frame = FrameOffset(1 / 0.3, 0.0)
    rho = coherent_dm(0.3 + 0.2j, 80)
    lane = _make_lane(rho, frame, params, dt)
    tracker = LyapunovTracker(params, dt, LyapunovSchedule())
    tracker._rebuild(lane.ctx)
    responses = lane.det_mean_responses(0.7, tracker._perts)
    x = [params.beta * mq for mq, _ in responses]
    y = [params.beta * mp for _, mp in responses]
    j_fast = np.array([[x[0] - x[1], x[2] - x[3]],
                       [y[0] - y[1], y[2] - y[3]]]) / (2e-3)
    j_pub = local_jacobian(rho, 0.7, dt, frame, params)
    assert np.max(np.abs(j_fast - j_pub)) < 1e-8


@pytest.mark.slow
def test_quantum_lyapunov_epsilon_invariance():
    # exponents are insensitive to the probe size within the declared band
    params = ModelParams(beta=0.3, g=0.3, gamma=0.125, eta=1.0)
    spc = 3000
    sched = StepSchedule(dt=TWO_PI / spc, n_steps=30 * spc,
                         recenter=RecenterPolicy(), output_stride=spc)
    lams = []
    for eps in (5e-4, 1e-3, 2e-3):
        res = quantum_lyapunov(vacuum_dm(150), FrameOffset(1 / 0.3, 0.0), params,
                               sched, LyapunovSchedule(epsilon=eps), seed=(3, 0))
        lams.append(res.lambda_plus)
    spread = max(lams) - min(lams)
    assert spread <= 0.1 * max(abs(l) for l in lams)


def test_quantum_lyapunov_smoke_and_determinism():
    params = ModelParams(beta=0.3, g=0.3, gamma=0.125, eta=1.0)
    spc = 600
    sched = StepSchedule(dt=TWO_PI / spc, n_steps=3 * spc,
                         recenter=RecenterPolicy(), output_stride=60)
    lyap = LyapunovSchedule(burn_in_cycles=1.0)
    r1 = quantum_lyapunov(vacuum_dm(80), FrameOffset(1 / 0.3, 0.0), params,
                          sched, lyap, seed=(5, 0))
    r2 = quantum_lyapunov(vacuum_dm(80), FrameOffset(1 / 0.3, 0.0), params,
                          sched, lyap, seed=(5, 0))
    assert r1.lambda_plus == r2.lambda_plus
    assert r1.lambda_plus >= r1.lambda_minus
    assert len(r1.series_t) == len(r1.series_lambda_plus) > 0
    assert math.isfinite(r1.lambda_plus)
