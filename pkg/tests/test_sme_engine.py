"""Single steps and trajectory integration of the monitored oscillator."""

import math

import numpy as np
import pytest

from qduffing.duffing_model import FrameOffset, ModelParams
from qduffing.errors import BasisTooSmallError, SingularStepError
from qduffing.fock_linalg import (
    build_operator_table,
    coherent_dm,
    expectation,
    fock_dm,
    purity,
    trace_distance,
    vacuum_dm,
)
from qduffing.moving_basis import RecenterPolicy
from qduffing.sme_engine import (
    StepInput,
    StepSchedule,
    deterministic_step,
    filter_step,
    lindblad_rk4_step,
    rouchon_step,
    simulate_trajectory,
)

FRAME0 = FrameOffset()


def damping_params(eta=0.0):
    return ModelParams(beta=1.0, g=0.0, gamma=0.125, eta=eta, hamiltonian="zero")


def test_vacuum_fixed_point():
    rho = vacuum_dm(10)
    out = rouchon_step(StepInput(rho=rho, t=0.0, dt=1e-3, dW=0.4,
                                 frame=FRAME0, params=damping_params(eta=0.6)))
    assert np.max(np.abs(out.rho_next - rho)) < 1e-15
    assert abs(out.dy - 0.4) < 1e-15


def test_single_excitation_damping_oracle():
    # one step from |1><1| with H = 0, eta = 0; closed-form 2x2 algebra:
    # <n>' = (1 - G dt)^2 / ((1 - G dt)^2 + 2 G dt)
    gamma, dt = 0.125, 1e-3
    out = rouchon_step(StepInput(rho=fock_dm(1, 8), t=0.0, dt=dt, dW=0.3,
                                 frame=FRAME0, params=damping_params()))
    table = build_operator_table(8)
    got = expectation(table.adag @ table.a, out.rho_next).real
    expected = (1 - gamma * dt) ** 2 / ((1 - gamma * dt) ** 2 + 2 * gamma * dt)
    assert abs(got - expected) < 1e-13
    assert abs(expected - (1 - 2 * gamma * dt)) < 1e-6


def test_eta1_purity_preserved_per_step():
    params = ModelParams(beta=1.0, g=0.3, gamma=0.125, eta=1.0)
    rho = coherent_dm(0.4 + 0.2j, 60)
    out = rouchon_step(StepInput(rho=rho, t=0.3, dt=1e-3, dW=0.05,
                                 frame=FrameOffset(1.0, 0.0), params=params))
    assert abs(purity(out.rho_next) - 1.0) < 1e-10


def test_step_normalization_contract():
    params = ModelParams(beta=0.5, g=0.3, gamma=0.125, eta=0.4)
    rho = coherent_dm(0.3, 50)
    out = rouchon_step(StepInput(rho=rho, t=1.0, dt=1e-3, dW=-0.02,
                                 frame=FrameOffset(2.0, 0.0), params=params))
    # Hermitian bit-for-bit, trace 1 to machine precision
    assert np.array_equal(out.rho_next, out.rho_next.conj().T)
    assert abs(np.trace(out.rho_next).real - 1.0) < 1e-13


def test_deterministic_equals_rouchon_dw0():
    params = ModelParams(beta=1.0, g=0.3, gamma=0.125, eta=1.0)
    rho = coherent_dm(0.4, 50)
    det = deterministic_step(rho, 0.3, 1e-3, FrameOffset(1.0, 0.0), params)
    via = rouchon_step(StepInput(rho=rho, t=0.3, dt=1e-3, dW=0.0,
                                 frame=FrameOffset(1.0, 0.0), params=params))
    assert np.array_equal(det, via.rho_next)


def test_eta0_rouchon_ignores_noise():
    params = damping_params(eta=0.0)
    rho = fock_dm(2, 10)
    outs = [rouchon_step(StepInput(rho=rho, t=0.0, dt=1e-3, dW=w,
                                   frame=FRAME0, params=params)).rho_next
            for w in (-0.5, 0.0, 0.8)]
    assert np.array_equal(outs[0], outs[1])
    assert np.array_equal(outs[1], outs[2])


def test_filter_step_matched_identity_single_step():
    params = ModelParams(beta=0.3, g=0.3, gamma=0.125, eta=0.4)
    frame = FrameOffset(1 / 0.3, 0.0)
    rho = coherent_dm(0.2 - 0.1j, 40)
    truth = rouchon_step(StepInput(rho=rho, t=0.5, dt=1e-3, dW=0.13,
                                   frame=frame, params=params))
    filt = filter_step(rho, truth.dy, 0.5, 1e-3, frame, params)
    assert np.array_equal(truth.rho_next, filt.rho_next)


def test_filter_eta0_ignores_record():
    params = damping_params(eta=0.0)
    rho = fock_dm(1, 8)
    f1 = filter_step(rho, 0.7, 0.0, 1e-3, FRAME0, params).rho_next
    f2 = filter_step(rho, -1.2, 0.0, 1e-3, FRAME0, params).rho_next
    det = deterministic_step(rho, 0.0, 1e-3, FRAME0, params)
    assert np.array_equal(f1, f2)
    assert np.array_equal(f1, det)


def test_singular_step_error():
    # a deliberately huge dt collapses the normalization trace
    params = ModelParams(beta=1.0, g=0.0, gamma=0.5, eta=0.0, hamiltonian="zero")
    rho = fock_dm(1, 4)
    with pytest.raises((SingularStepError, ValueError)):
        rouchon_step(StepInput(rho=rho, t=0.0, dt=-1.0, dW=0.0,
                               frame=FRAME0, params=params))


# -- Lindblad RK4 oracle -----------------------------------------------------

def test_rk4_vacuum_fixed_point():
    rho = vacuum_dm(10)
    out = lindblad_rk4_step(rho, 0.0, 1e-3, FRAME0, damping_params())
    assert np.max(np.abs(out - rho)) < 1e-15


def test_rk4_amplitude_damping_decay():
    gamma, dt = 0.125, 1e-3
    rho = fock_dm(1, 10)
    params = damping_params()
    for n in range(1000):
        rho = lindblad_rk4_step(rho, n * dt, dt, FRAME0, params)
    table = build_operator_table(10)
    got = expectation(table.adag @ table.a, rho).real
    assert abs(got - math.exp(-2 * gamma)) < 1e-6
    assert abs(np.trace(rho).real - 1.0) < 1e-9


def test_rk4_trace_preserved_per_step():
    params = ModelParams(beta=1.0, g=0.3, gamma=0.125, eta=0.0)
    rho = coherent_dm(0.5, 32)
    out = lindblad_rk4_step(rho, 0.2, math.pi / 3000, FrameOffset(1.0, 0.0), params)
    assert abs(np.trace(out).real - np.trace(rho).real) < 1e-12
    assert np.max(np.abs(out - out.conj().T)) < 1e-14


# -- trajectory loop ----------------------------------------------------------

def small_schedule(n_steps, **kw):
    # coarse dt keeps unit tests quick; the looser tail tolerance absorbs
    # the larger per-step splitting dust that comes with it
    args = dict(dt=2 * math.pi / 600, n_steps=n_steps,
                recenter=RecenterPolicy(tail_tolerance=1e-3), output_stride=10)
    args.update(kw)
    return StepSchedule(**args)


def test_trajectory_zero_steps():
    params = ModelParams(beta=1.0, g=0.3, gamma=0.125, eta=0.5)
    rec = simulate_trajectory(vacuum_dm(30), FrameOffset(1.0, 0.0), params,
                              small_schedule(0), seed=3)
    assert len(rec.times) == 1
    assert rec.times[0] == 0.0
    assert rec.dy[0] == 0.0
    assert abs(rec.mean_q[0] - 1.0) < 1e-9


def test_trajectory_deterministic_by_seed():
    params = ModelParams(beta=1.0, g=0.3, gamma=0.125, eta=0.5)
    recs = [simulate_trajectory(vacuum_dm(40), FrameOffset(1.0, 0.0), params,
                                small_schedule(200), seed=11) for _ in range(2)]
    assert np.array_equal(recs[0].mean_q, recs[1].mean_q)
    assert np.array_equal(recs[0].dy, recs[1].dy)
    rec3 = simulate_trajectory(vacuum_dm(40), FrameOffset(1.0, 0.0), params,
                               small_schedule(200), seed=12)
    assert not np.array_equal(recs[0].dy, rec3.dy)


def test_trajectory_matched_replay_bitwise():
    params = ModelParams(beta=0.5, g=0.3, gamma=0.125, eta=0.4)
    sched = small_schedule(300)
    truth = simulate_trajectory(vacuum_dm(50), FrameOffset(2.0, 0.0), params,
                                sched, seed=21, record_full=True)
    replay = simulate_trajectory(vacuum_dm(50), FrameOffset(2.0, 0.0), params,
                                 sched, seed=99, replay_record=truth.record)
    assert np.array_equal(truth.mean_q, replay.mean_q)
    assert np.array_equal(truth.purity, replay.purity)
    assert np.array_equal(truth.q0, replay.q0)


def test_trajectory_replay_too_short():
    params = ModelParams(beta=1.0, g=0.3, gamma=0.125, eta=0.4)
    with pytest.raises(ValueError):
        simulate_trajectory(vacuum_dm(20), FRAME0, params, small_schedule(50),
                            replay_record=np.zeros(10))


def test_trajectory_basis_too_small_aborts():
    params = ModelParams(beta=1.0, g=0.3, gamma=0.125, eta=0.5)
    sched = small_schedule(
        50, recenter=RecenterPolicy(tail_tolerance=1e-14), output_stride=1)
    with pytest.raises(BasisTooSmallError):
        simulate_trajectory(fock_dm(4, 8), FrameOffset(1.0, 0.0), params,
                            sched, seed=1)


def test_trajectory_tail_warning():
    params = ModelParams(beta=1.0, g=0.3, gamma=0.125, eta=0.5)
    sched = small_schedule(
        3, recenter=RecenterPolicy(tail_tolerance=1e-4), output_stride=1)
    with pytest.warns(RuntimeWarning):
        simulate_trajectory(coherent_dm(0.8, 12), FrameOffset(1.0, 0.0), params,
                            sched, seed=1)


def test_trajectory_pure_lane_matches_dense_lane():
    # eta = 1 from a pure state runs in the vector lane; a tiny eta
    # difference forces the dense lane; physics must agree closely
    base = dict(beta=0.5, g=0.3, gamma=0.125)
    sched = small_schedule(400, output_stride=40)
    rec_pure = simulate_trajectory(vacuum_dm(60), FrameOffset(2.0, 0.0),
                                   ModelParams(eta=1.0, **base), sched, seed=5)
    rec_dense = simulate_trajectory(
        vacuum_dm(60) * 0.999 + np.eye(60, dtype=complex) * (0.001 / 60),
        FrameOffset(2.0, 0.0), ModelParams(eta=1.0, **base), sched, seed=5)
    assert np.max(np.abs(rec_pure.mean_q - rec_dense.mean_q)) < 5e-2
    assert rec_pure.purity[-1] == 1.0
    assert rec_dense.purity[-1] < 1.0 + 1e-12


def test_trajectory_state_stays_physical():
    # positivity diagnostic on sampled states (not enforced per step)
    from qduffing.fock_linalg import assert_density_matrix

    class Capture:
        def __init__(self):
            self.rho = None

        def observe(self, lane, t):
            self.rho = lane.density()

        def finish(self, t):
            pass

    params = ModelParams(beta=1.0, g=0.3, gamma=0.125, eta=0.4)
    cap = Capture()
    simulate_trajectory(vacuum_dm(60), FrameOffset(1.0, 0.0), params,
                        StepSchedule(dt=2 * math.pi / 3000, n_steps=400,
                                     recenter=RecenterPolicy(),
                                     output_stride=100),
                        seed=9, observer=cap)
    assert_density_matrix(cap.rho, herm_tol=1e-10, trace_tol=1e-10,
                          eig_floor=-1e-8)


def test_first_order_consistency_richardson():
    # halving dt changes the one-cycle eta=0 state by O(dt): observed
    # order >= 0.9
    params = ModelParams(beta=1.0, g=0.3, gamma=0.125, eta=0.0)
    frame = FrameOffset(1.0, 0.0)
    states = {}
    for spc in (750, 1500, 3000):
        sched = StepSchedule(dt=2 * math.pi / spc, n_steps=spc,
                             recenter=RecenterPolicy(threshold=1e9),
                             output_stride=spc)
        rho = vacuum_dm(40)
        dt = 2 * math.pi / spc
        for n in range(spc):
            out = rouchon_step(StepInput(rho=rho, t=n * dt, dt=dt, dW=0.0,
                                         frame=frame, params=params))
            rho = out.rho_next
        states[spc] = rho
    d1 = trace_distance(states[750], states[1500])
    d2 = trace_distance(states[1500], states[3000])
    order = math.log2(d1 / d2)
    assert order >= 0.9


@pytest.mark.slow
def test_trajectory_bounded_chaotic_regime():
    # the chaotic attractor keeps the scaled amplitude |beta <q>| within
    # the classical bound over 100 drive cycles
    params = ModelParams(beta=0.1, g=0.3, gamma=0.125, eta=0.4)
    spc = 6000
    sched = StepSchedule(dt=2 * math.pi / spc, n_steps=100 * spc,
                         recenter=RecenterPolicy(tail_tolerance=1e-4),
                         output_stride=spc // 10)
    rec = simulate_trajectory(vacuum_dm(200), FrameOffset(10.0, 0.0), params,
                              sched, seed=8)
    assert np.max(np.abs(0.1 * rec.mean_q)) <= 2.5


@pytest.mark.slow
def test_eta1_purifies_mixed_state():
    # from a mixed initial state at eta = 1, purity is driven toward 1
    params = ModelParams(beta=1.0, g=0.3, gamma=0.125, eta=1.0)
    dim = 80
    rho0 = 0.5 * vacuum_dm(dim) + 0.3 * fock_dm(1, dim) + 0.2 * fock_dm(3, dim)
    spc = 3000
    sched = StepSchedule(dt=2 * math.pi / spc, n_steps=50 * spc,
                         recenter=RecenterPolicy(), output_stride=spc)
    rec = simulate_trajectory(rho0, FrameOffset(1.0, 0.0), params, sched, seed=14)
    assert rec.purity[-1] >= 0.95
