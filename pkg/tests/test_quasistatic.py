import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg, signal

from acmix import (
    ModelParams,
    NoiseSpec,
    SpectralConfig,
    build_steady_path,
    eigen_track,
    enumerate_steady_states,
    evolve_forced,
    find_state,
    kalman_check,
    local_epsilon_steer,
    operator_matrix,
    place_gain,
    quasistatic_transfer,
    solve_lyapunov,
    synthesize_feedback,
)
from acmix.quasistatic import _closed_loop, _poles

CFG = SpectralConfig(M=16, N_noise=8)
P = ModelParams(1.0, 2.5)


@pytest.fixture(scope="module")
def states():
    return enumerate_steady_states(P, CFG)


@pytest.fixture(scope="module")
def path(states):
    return build_steady_path(find_state(states, 0), find_state(states, 1), P, CFG, tau_steps=16)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10_000), st.floats(0.5, 8.0))
def test_place_gain_assigns_requested_spectrum(m, seed, rate):
    rng = np.random.default_rng(seed)
    lam = rng.uniform(-3, 3, m)
    B = rng.standard_normal((m, m)) + 3 * np.eye(m)
    poles = _poles(m, rate)
    K = place_gain(lam, B, poles)
    got = np.sort(np.linalg.eigvals(_closed_loop(lam, B, K)).real)
    np.testing.assert_allclose(got, np.sort(poles), atol=1e-5 * rate)


def test_place_gain_agrees_with_scipy_spectrum():
    rng = np.random.default_rng(3)
    m = 3
    lam = np.array([1.5, 0.2, -0.7])
    B = rng.standard_normal((m, m)) + 2 * np.eye(m)
    poles = np.array([-1.0, -1.5, -2.0, -2.5, -3.0, -3.5])
    D = np.zeros((2 * m, 2 * m))
    D[:m, :m] = np.diag(lam)
    D[:m, m:] = B
    inp = np.vstack([np.zeros((m, m)), np.eye(m)])
    ref = signal.place_poles(D, inp, poles)
    ours = _closed_loop(lam, B, place_gain(lam, B, poles))
    np.testing.assert_allclose(np.sort(np.linalg.eigvals(ours).real), np.sort(ref.computed_poles), atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_lyapunov_matches_scipy(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n)) - (np.abs(rng.standard_normal()) + n) * np.eye(n)
    Q = solve_lyapunov(A)
    ref = linalg.solve_continuous_lyapunov(A.T, -np.eye(n))
    np.testing.assert_allclose(Q, ref, rtol=1e-8, atol=1e-10)
    assert np.linalg.eigvalsh(Q).min() > 0


def test_operator_matrix_at_zero_is_diagonal():
    A = operator_matrix(np.zeros(16), P, CFG)
    np.testing.assert_allclose(A, np.diag(P.lam - CFG.basis.k**2), atol=1e-14)


def test_eigen_track_structure(path):
    tr = eigen_track(path, P, CFG)
    assert tr.m == 1 and tr.eta > 0
    np.testing.assert_allclose(tr.values[0, 0], P.lam - P.nu, rtol=1e-10)
    assert tr.values[-1, 0] < 0
    for V in tr.vectors:
        np.testing.assert_allclose(V @ V.T, np.eye(tr.m), atol=1e-10)
    signs = np.sum(tr.vectors[1:] * tr.vectors[:-1], axis=2)
    assert np.all(signs > 0)
    lam, E = tr.at(0.37)
    np.testing.assert_allclose(E @ E.T, np.eye(tr.m), atol=1e-12)


def test_feedback_law(path):
    tr = eigen_track(path, P, CFG)
    assert kalman_check(tr, CFG).min() > 0.1
    law = synthesize_feedback(tr, CFG, poles=_poles(tr.m, 6.0))
    assert np.all(law.closed_loop_abscissa < -5.9)
    assert law.lyapunov_residuals.max() < 1e-10


def test_transfer_converges_with_slower_motion(states):
    start, end = find_state(states, -1), find_state(states, 1)
    defects = [quasistatic_transfer(start, end, eps, P, CFG, tau_steps=32).defect for eps in (0.4, 0.2)]
    assert defects[1] < defects[0] < 1.0


def test_transfer_record_replays_open_loop(states):
    start, end = find_state(states, 0), find_state(states, 1)
    res = quasistatic_transfer(start, end, 0.25, P, CFG, tau_steps=32, N=8)
    assert res.control.basis == "psi"
    np.testing.assert_array_equal(res.trajectory.states[0], start.field)
    replay = evolve_forced(start.field, res.control, P, CFG, save_every=10**6)
    np.testing.assert_allclose(replay.final, res.trajectory.final, atol=1e-12)
    lo, hi = res.sandwich
    assert 0 < lo <= hi
    assert res.times[-1] == pytest.approx(4.0)


def test_local_steer_contracts(states):
    target = find_state(states, 1)
    noise = NoiseSpec.power_law(8)
    u0 = target.field + 0.05 * np.eye(16)[1]
    _, err = local_epsilon_steer(u0, target, 1e-4, P, CFG, noise)
    assert err <= 1e-4


def test_argument_validation(states):
    a, b = find_state(states, 0), find_state(states, 1)
    with pytest.raises(ValueError):
        quasistatic_transfer(a, b, 0.0, P, CFG)
    with pytest.raises(ValueError):
        quasistatic_transfer(a, b, 0.5, P, CFG, pole_rate=0.0)
    with pytest.raises(ValueError):
        local_epsilon_steer(a.field + 10.0, b, 1e-3, P, CFG, NoiseSpec.power_law(8))
