import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acmix import (
    ModelParams,
    NoiseSpec,
    SpectralConfig,
    TimeGrid,
    adjoint_sweep,
    constant_potential,
    evolve_stochastic,
    evolve_unforced,
    flow_J,
    flow_J2,
    flow_J_path,
    flow_J_star,
    potential_from_trajectory,
)
from conftest import unit

CFG = SpectralConfig(M=16, N_noise=8)
P = ModelParams(1.0, 2.5)


def stochastic_path(seed, steps=400, dt=1e-3, amp=1.0):
    noise = NoiseSpec.power_law(8, seed=seed)
    u0 = amp * np.random.default_rng(seed).standard_normal(16) / np.arange(1, 17)
    return evolve_stochastic(u0, noise, P, CFG, TimeGrid(0.0, dt, steps))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_discrete_duality(seed):
    traj = stochastic_path(seed)
    pot = potential_from_trajectory(traj, P, CFG)
    rng = np.random.default_rng(seed + 1)
    xi, eta = rng.standard_normal(16), rng.standard_normal(16)
    lhs = flow_J(xi, pot, 0.1, 0.35, P, CFG) @ eta
    rhs = xi @ flow_J_star(eta, pot, 0.1, 0.35, P, CFG)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-13)


def test_constant_potential_closed_form():
    grid = TimeGrid(0.0, 1e-2, 100)
    c = 0.7
    pot = constant_potential(c, grid, CFG)
    k = np.arange(1, 17)
    factor = (1 - 1e-2 * c) / (1 + 1e-2 * k**2)
    np.testing.assert_allclose(flow_J(np.ones(16), pot, 0.0, 1.0, P, CFG), factor**100, rtol=1e-12, atol=1e-15)


def test_tangent_is_derivative_of_step():
    traj = stochastic_path(3, steps=50)
    pot = potential_from_trajectory(traj, P, CFG)
    u0 = traj.states[10]
    xi = unit(16) + 0.5 * unit(16, 3)
    h = 1e-5
    grid = TimeGrid(0.0, 1e-3, 40)
    plus = evolve_unforced(u0 + h * xi, P, CFG, grid).final
    minus = evolve_unforced(u0 - h * xi, P, CFG, grid).final
    # the linearization along the unforced path from u0
    base = evolve_unforced(u0, P, CFG, grid)
    pot0 = potential_from_trajectory(base, P, CFG)
    Jxi = flow_J(xi, pot0, 0.0, grid.t1, P, CFG)
    np.testing.assert_allclose((plus - minus) / (2 * h), Jxi, atol=1e-8)
    assert pot.sup_norm > 0


def test_second_variation_matches_finite_differences():
    grid = TimeGrid(0.0, 1e-3, 200)
    u0 = 1.2 * unit(16) - 0.4 * unit(16, 2)
    a, b = unit(16), unit(16, 1)
    h = 1e-3

    def S(v):
        return evolve_unforced(v, P, CFG, grid).final

    fd = (S(u0 + h * a + h * b) - S(u0 + h * a - h * b) - S(u0 - h * a + h * b) + S(u0 - h * a - h * b)) / (4 * h * h)
    J2 = flow_J2(a, b, evolve_unforced(u0, P, CFG, grid), 0.0, grid.t1, P, CFG)
    np.testing.assert_allclose(J2, fd, atol=1e-5 * max(1.0, np.abs(fd).max()))


def test_second_variation_vanishes_for_linear_model():
    p = ModelParams(1.0, 2.5, cubic=False)
    grid = TimeGrid(0.0, 1e-3, 50)
    traj = evolve_unforced(unit(16), p, CFG, grid)
    assert np.all(flow_J2(unit(16), unit(16, 1), traj, 0.0, grid.t1, p, CFG) == 0)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_growth_bound(seed):
    traj = stochastic_path(seed, steps=500, amp=2.0)
    pot = potential_from_trajectory(traj, P, CFG)
    xi = np.random.default_rng(seed).standard_normal(16)
    bound = math.exp(P.lam * 0.5) * np.linalg.norm(xi)
    assert np.linalg.norm(flow_J(xi, pot, 0.0, 0.5, P, CFG)) <= bound + 1e-6
    assert np.linalg.norm(flow_J_star(xi, pot, 0.0, 0.5, P, CFG)) <= bound + 1e-6


def test_path_and_sweep_endpoints():
    traj = stochastic_path(7, steps=100)
    pot = potential_from_trajectory(traj, P, CFG)
    xi = unit(16)
    path = flow_J_path(xi, pot, 0.02, 0.08, P, CFG)
    assert path.shape == (61, 16)
    np.testing.assert_array_equal(path[0], xi)
    np.testing.assert_allclose(path[-1], flow_J(xi, pot, 0.02, 0.08, P, CFG), atol=1e-15)
    sweep = adjoint_sweep(xi, pot, 0.02, 0.08, P, CFG)
    np.testing.assert_array_equal(sweep[-1], xi)
    np.testing.assert_allclose(sweep[0], flow_J_star(xi, pot, 0.02, 0.08, P, CFG), atol=1e-15)


def test_batches_match_single_fields():
    traj = stochastic_path(9, steps=60)
    pot = potential_from_trajectory(traj, P, CFG)
    X = np.random.default_rng(0).standard_normal((3, 16))
    batch = flow_J(X, pot, 0.0, 0.06, P, CFG)
    for i in range(3):
        np.testing.assert_allclose(batch[i], flow_J(X[i], pot, 0.0, 0.06, P, CFG), atol=1e-13)


def test_potential_requires_full_trajectory():
    traj = evolve_unforced(unit(16), P, CFG, TimeGrid(0.0, 1e-3, 10), save_every=5)
    with pytest.raises(ValueError):
        potential_from_trajectory(traj, P, CFG)
    with pytest.raises(ValueError):
        flow_J(unit(16), constant_potential(0.0, TimeGrid(0, 0.1, 10), CFG), 0.5, 0.2, P, CFG)
