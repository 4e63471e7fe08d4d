import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acmix import (
    ModelParams,
    NoiseSpec,
    SpectralConfig,
    TimeGrid,
    assemble_gramian,
    constant_potential,
    duality_gap,
    evolve_stochastic,
    flow_J,
    malliavin_matrix,
    observability_constant,
    operator_bounds,
    potential_from_trajectory,
    regularized_control,
    terminal_identity_error,
)
from conftest import unit

CFG = SpectralConfig(M=16, N_noise=8)
P = ModelParams(1.0, 2.5)
NOISE = NoiseSpec.power_law(8, seed=0)


def path_potential(seed, steps=500, dt=2e-3):
    noise = NoiseSpec.power_law(8, seed=seed)
    traj = evolve_stochastic(unit(16), noise, P, CFG, TimeGrid(0.0, dt, steps))
    return potential_from_trajectory(traj, P, CFG)


def brute_gramian(pot, N, s, t):
    """Sum of rank-one pushes of each input direction, one flow per step."""
    grid = pot.grid
    i, j = grid.index(s), grid.index(t)
    dt = grid.dt
    inv = 1.0 / (1.0 + dt * P.nu * CFG.basis.k**2)
    lift = CFG.overlap[:, :N] * NOISE.b[:N]
    G = np.zeros((16, 16))
    for n in range(i, j):
        cols = flow_J((inv[:, None] * lift).T, pot, grid.times[n + 1], t, P, CFG)
        G += dt * cols.T @ cols
    return G


def test_matches_brute_force_assembly():
    pot = path_potential(1)
    G = assemble_gramian(pot, NOISE, 4, 0.2, 0.6, P, CFG).matrix
    np.testing.assert_allclose(G, brute_gramian(pot, 4, 0.2, 0.6), rtol=1e-10, atol=1e-14)


def test_constant_potential_geometric_sum():
    dt, n, c, N = 1e-2, 50, 0.3, 5
    pot = constant_potential(c, TimeGrid(0.0, dt, n), CFG)
    G = assemble_gramian(pot, NOISE, N, 0.0, 0.5, P, CFG).matrix
    inv = 1.0 / (1.0 + dt * CFG.basis.k**2)
    rho = (1 - dt * c) * inv
    lift = CFG.overlap[:, :N] * NOISE.b[:N]
    q = np.outer(rho, rho)
    expected = dt * np.outer(inv, inv) * (lift @ lift.T) * (1 - q**n) / (1 - q)
    np.testing.assert_allclose(G, expected, rtol=1e-10, atol=1e-16)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_psd_and_monotone_in_N(seed, N):
    pot = path_potential(seed, steps=200)
    G = assemble_gramian(pot, NOISE, N, 0.0, 0.4, P, CFG)
    np.testing.assert_array_equal(G.matrix, G.matrix.T)
    scale = np.abs(G.matrix).max()
    assert G.eigvalsh().min() >= -1e-12 * scale
    if N < 8:
        bigger = assemble_gramian(pot, NOISE, N + 1, 0.0, 0.4, P, CFG).matrix
        assert np.linalg.eigvalsh(bigger - G.matrix).min() >= -1e-12 * scale


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1e-2, 1e-4, 1e-6]))
def test_optimality_identities(seed, beta):
    pot = path_potential(seed, steps=250)
    z = np.random.default_rng(seed).standard_normal(16)
    assert duality_gap(z, pot, NOISE, 6, beta, 0.0, 0.5, P, CFG) < 1e-9
    assert terminal_identity_error(z, pot, NOISE, 6, beta, 0.0, 0.5, P, CFG) < 1e-9 * np.linalg.norm(z)


def test_control_is_a_minimizer():
    pot = path_potential(4, steps=250)
    z = unit(16)
    beta = 1e-3
    signal, rep = regularized_control(z, pot, NOISE, 6, beta, 0.0, 0.5, P, CFG)
    grid = pot.grid
    inv = 1.0 / (1.0 + grid.dt * CFG.basis.k**2)
    lift = CFG.overlap[:, :6] * NOISE.b[:6]

    def cost(samples):
        zt = flow_J(z, pot, 0.0, 0.5, P, CFG)
        for n in range(250):
            zt = zt + grid.dt * flow_J(inv * (lift @ samples[n]), pot, grid.times[n + 1], 0.5, P, CFG)
        return 0.5 * grid.dt * np.sum(samples[:-1] ** 2) + zt @ zt / (2 * beta)

    base = cost(signal.samples)
    rng = np.random.default_rng(0)
    for _ in range(3):
        d = rng.standard_normal(signal.samples.shape)
        d[-1] = 0
        assert cost(signal.samples + 1e-3 * d) >= base - 1e-12 * base


def test_decay_improves_with_smaller_beta_and_beats_free_flow():
    pot = path_potential(5)
    ratios = []
    for beta in (1e-1, 1e-3, 1e-5):
        _, rep = regularized_control(unit(16), pot, NOISE, 8, beta, 0.0, 1.0, P, CFG)
        assert rep.decay_ratio <= rep.uncontrolled_ratio
        ratios.append(rep.decay_ratio)
    assert ratios[0] > ratios[1] > ratios[2]


def test_operator_bounds():
    G = assemble_gramian(path_potential(6), NOISE, 4, 0.0, 1.0, P, CFG)
    for beta in (1e-2, 1e-6):
        res, scaled = operator_bounds(G, beta)
        assert res <= beta**-0.5 * (1 + 1e-12)
        assert scaled <= 1 + 1e-12


def test_zero_modes_means_no_control():
    pot = path_potential(7, steps=100)
    signal, rep = regularized_control(unit(16), pot, NOISE, 0, 1e-4, 0.0, 0.2, P, CFG)
    assert np.all(signal.samples == 0)
    assert rep.decay_ratio == pytest.approx(rep.uncontrolled_ratio, rel=1e-12)


def test_observability_constant():
    pot = path_potential(8)
    C, share = observability_constant(pot, NOISE, 8, 0.0, 1.0, P, CFG, trials=16)
    assert 0 < C < np.inf
    assert 0 < share <= 1
    # more observed modes can only shrink the constant for fixed terminal data
    y = np.random.default_rng(0).standard_normal((4, 16))
    c2, _ = observability_constant(pot, NOISE, 2, 0.0, 1.0, P, CFG, terminal=y)
    c8, _ = observability_constant(pot, NOISE, 8, 0.0, 1.0, P, CFG, terminal=y)
    assert c8 <= c2 * 2.0


def test_window_validation():
    pot = path_potential(9, steps=100)
    with pytest.raises(ValueError):
        assemble_gramian(pot, NOISE, 4, 0.1, 0.1, P, CFG)
    with pytest.raises(ValueError):
        assemble_gramian(pot, NOISE, 9, 0.0, 0.1, P, CFG)
    with pytest.raises(ValueError):
        regularized_control(unit(16), pot, NOISE, 4, 0.0, 0.0, 0.1, P, CFG)


def test_huge_beta_is_open_loop():
    pot = path_potential(10)
    _, rep = regularized_control(unit(16), pot, NOISE, 8, 1e6, 0.0, 0.5, P, CFG)
    assert abs(rep.decay_ratio - rep.uncontrolled_ratio) <= 1e-4


def test_zero_state_needs_no_control():
    pot = path_potential(11, steps=100)
    signal, rep = regularized_control(np.zeros(16), pot, NOISE, 8, 1e-4, 0.0, 0.2, P, CFG)
    assert np.all(signal.samples == 0) and rep.decay_ratio == 0.0
    assert duality_gap(np.zeros(16), pot, NOISE, 8, 1e-4, 0.0, 0.2, P, CFG) == 0.0


def test_malliavin_matrix_at_rest_is_deterministic_gramian():
    grid = TimeGrid(0.0, 2e-3, 250)
    quiet = NOISE.scaled(0.0)
    traj = evolve_stochastic(np.zeros(16), quiet, P, CFG, grid)
    M = malliavin_matrix(traj, NOISE, 6, 0.0, 0.5, P, CFG).matrix
    G = assemble_gramian(constant_potential(-P.lam, grid, CFG), NOISE, 6, 0.0, 0.5, P, CFG).matrix
    np.testing.assert_array_equal(M, G)


def test_observability_single_mode_closed_form():
    dt, n, N = 2e-3, 250, 4
    pot = constant_potential(-P.lam, TimeGrid(0.0, dt, n), CFG)
    C, _ = observability_constant(pot, NOISE, N, 0.0, 0.5, P, CFG, terminal=unit(16))
    inv = 1.0 / (1.0 + dt)
    rho = (1.0 + dt * P.lam) * inv
    row = inv * np.linalg.norm(CFG.overlap[0, :N])
    observed = row * np.sqrt(dt * np.sum(rho ** (2 * np.arange(n))))
    assert C == pytest.approx(rho**n / (observed + N**-0.5), rel=1e-6)


def test_shrinking_window_loses_information():
    y = np.random.default_rng(1).standard_normal((8, 16))
    consts = []
    for half in (0.6, 0.4, 0.2):
        cfg = SpectralConfig(M=16, N_noise=8, a=np.pi / 2 - half, b=np.pi / 2 + half)
        pot = constant_potential(-P.lam, TimeGrid(0.0, 2e-3, 250), cfg)
        consts.append(observability_constant(pot, NOISE, 8, 0.0, 0.5, P, cfg, terminal=y)[0])
    assert consts[0] <= consts[1] <= consts[2]
