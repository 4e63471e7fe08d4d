"""Linearized flow, its discrete adjoint and the second variation.

Along a potential ``g(t, x)`` the tangent equation ``z' = nu z_xx - g z`` is
stepped with the same IMEX Euler scheme as the nonlinear equation:

    z_{n+1} = T_n z_n,   T_n = L^{-1} (I - dt G_n),

with ``L = I + dt nu K^2`` diagonal and ``G_n`` the (symmetric) Galerkin
matrix of multiplication by ``g`` at node ``n``. The adjoint sweep applies
``T_n^T = (I - dt G_n) L^{-1}`` backwards, so the discrete pair is exactly
dual. When ``g = 3 u^2 - lam`` along a computed path, ``T_n`` is exactly the
derivative of the nonlinear step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import ModelParams, TimeGrid, Trajectory
from .spectral import SpectralConfig

__all__ = [
    "PotentialTrajectory",
    "potential_from_trajectory",
    "constant_potential",
    "flow_J",
    "flow_J_path",
    "flow_J_star",
    "adjoint_sweep",
    "flow_J2",
]


@dataclass
class PotentialTrajectory:
    """Collocation samples of a potential on a time grid.

    ``g_values`` has shape ``(steps + 1, Q)``, or ``(1, Q)`` for a potential
    that does not depend on time.
    """

    grid: TimeGrid
    g_values: np.ndarray
    sup_norm: float = 0.0

    def __post_init__(self):
        self.g_values = np.atleast_2d(np.asarray(self.g_values, dtype=float))
        rows = self.g_values.shape[0]
        if rows not in (1, self.grid.steps + 1):
            raise ValueError("potential needs one row per grid node or a single row")
        self.sup_norm = max(self.sup_norm, float(np.max(np.abs(self.g_values))))

    def at(self, n: int) -> np.ndarray:
        return self.g_values[0 if self.g_values.shape[0] == 1 else n]

    @property
    def is_constant(self) -> bool:
        return self.g_values.shape[0] == 1


def potential_from_trajectory(traj: Trajectory, p: ModelParams, cfg: SpectralConfig) -> PotentialTrajectory:
    """Samples ``3 u(t)^2 - lam`` at the collocation points for each stored state."""
    if traj.saved is not None:
        raise ValueError("the potential needs every time step of the trajectory")
    values = cfg.basis.to_grid(traj.states)
    if not np.all(np.isfinite(values)):
        raise ValueError("trajectory contains non-finite values")
    g = (3.0 * values**2 if p.cubic else 0.0 * values) - p.lam
    return PotentialTrajectory(traj.grid, g)


def constant_potential(values, grid: TimeGrid, cfg: SpectralConfig) -> PotentialTrajectory:
    """Time-independent potential from a scalar or collocation values."""
    g = np.broadcast_to(np.asarray(values, dtype=float), (cfg.quad_points,))
    return PotentialTrajectory(grid, g[None, :].copy())


class _Linear:
    def __init__(self, pot: PotentialTrajectory, p: ModelParams, cfg: SpectralConfig):
        self.pot, self.cfg = pot, cfg
        self.basis = cfg.basis
        self.dt = pot.grid.dt
        self.inv = 1.0 / (1.0 + self.dt * p.nu * self.basis.k**2)

    def indices(self, s: float, t: float) -> tuple[int, int]:
        i, j = self.pot.grid.index(s), self.pot.grid.index(t)
        if j < i:
            raise ValueError(f"need s <= t, got s={s}, t={t}")
        return i, j

    def mult(self, n: int, z: np.ndarray) -> np.ndarray:
        return self.basis.from_grid(self.pot.at(n) * self.basis.to_grid(z))

    def forward(self, n: int, z: np.ndarray) -> np.ndarray:
        return self.inv * (z - self.dt * self.mult(n, z))

    def backward(self, n: int, y: np.ndarray) -> np.ndarray:
        y = self.inv * y
        return y - self.dt * self.mult(n, y)


def _fields(xi) -> np.ndarray:
    return np.array(xi, dtype=float)


def flow_J_path(xi, pot, s: float, t: float, p: ModelParams, cfg: SpectralConfig) -> np.ndarray:
    """Tangent states at every node of ``[s, t]``, shape ``(k + 1, ..., M)``."""
    lin = _Linear(pot, p, cfg)
    i, j = lin.indices(s, t)
    z = _fields(xi)
    out = np.empty((j - i + 1,) + z.shape)
    out[0] = z
    for n in range(i, j):
        z = lin.forward(n, z)
        out[n - i + 1] = z
    return out


def flow_J(xi, pot, s: float, t: float, p: ModelParams, cfg: SpectralConfig) -> np.ndarray:
    """Apply the linearized flow from ``s`` to ``t``; ``xi`` may be a batch of fields."""
    lin = _Linear(pot, p, cfg)
    i, j = lin.indices(s, t)
    z = _fields(xi)
    for n in range(i, j):
        z = lin.forward(n, z)
    return z


def flow_J_star(xi, pot, s: float, t: float, p: ModelParams, cfg: SpectralConfig) -> np.ndarray:
    """Apply the discrete adjoint flow, terminal data at ``t``, result at ``s``."""
    lin = _Linear(pot, p, cfg)
    i, j = lin.indices(s, t)
    y = _fields(xi)
    for n in range(j - 1, i - 1, -1):
        y = lin.backward(n, y)
    return y


def adjoint_sweep(xi, pot, s: float, t: float, p: ModelParams, cfg: SpectralConfig) -> np.ndarray:
    """Adjoint states ``J*_{r,t} xi`` at every node ``r`` of ``[s, t]`` (index 0 is ``s``)."""
    lin = _Linear(pot, p, cfg)
    i, j = lin.indices(s, t)
    y = _fields(xi)
    out = np.empty((j - i + 1,) + y.shape)
    out[-1] = y
    for n in range(j - 1, i - 1, -1):
        y = lin.backward(n, y)
        out[n - i] = y
    return out


def flow_J2(xi, xi2, traj: Trajectory, s: float, t: float, p: ModelParams, cfg: SpectralConfig) -> np.ndarray:
    """Second variation of the flow in directions ``xi`` and ``xi2``.

    Integrates ``z' = nu z_xx - g z - 6 u (J xi)(J xi2)`` from ``z(s) = 0``
    with the same step as the tangent flow, so the result is the exact second
    derivative of the discrete solution map.
    """
    pot = potential_from_trajectory(traj, p, cfg)
    lin = _Linear(pot, p, cfg)
    i, j = lin.indices(s, t)
    basis = cfg.basis
    a = _fields(xi)
    b = _fields(xi2)
    z = np.zeros_like(a)
    for n in range(i, j):
        if p.cubic:
            u = basis.to_grid(traj.states[n])
            source = -6.0 * basis.from_grid(u * basis.to_grid(a) * basis.to_grid(b))
            z = lin.inv * (z - lin.dt * lin.mult(n, z) + lin.dt * source)
        else:
            z = lin.forward(n, z)
        a = lin.forward(n, a)
        b = lin.forward(n, b)
    return z
