"""Stationary states and paths of extended stationary states.

Stationary states solve ``-nu phi'' + phi^3 - lam phi = 0`` on (0, pi) with
Dirichlet conditions. They are found by shooting in the initial slope
``theta = phi'(0)``; every solution satisfies ``|theta| <= lam / sqrt(2 nu)``
and the nontrivial ones bifurcate from zero at ``lam = nu j^2``.

A path between two stationary states keeps the shooting construction
outside the control window ``[a, b]`` and glues the two outer pieces inside
it with a C1 connector. The forcing ``h`` that makes each member
stationary is then supported in ``[a, b]``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .dynamics import ModelParams, lyapunov_energy
from .spectral import SpectralConfig, psi_values

logger = logging.getLogger(__name__)

__all__ = [
    "SteadyState",
    "SteadyPath",
    "StructuralError",
    "shoot_ivp",
    "shoot_profile",
    "first_integral",
    "expected_count",
    "enumerate_steady_states",
    "steady_state_residual",
    "refine_steady_state",
    "build_steady_path",
    "find_state",
    "energy",
]

SCAN_POINTS = 10_000
SCAN_STEPS = 1024


class StructuralError(RuntimeError):
    """A computed object violates a structural property it must have."""


@dataclass
class SteadyState:
    """A stationary state with its shooting slope and label.

    ``index_k`` is 0 for the zero state and ``+-k`` for the states whose
    profile has ``k`` humps, with the sign of ``theta``.
    """

    field: np.ndarray
    theta: float
    index_k: int
    stable: bool
    top_eigenvalue: float = float("nan")

    def slope_at_pi(self, cfg: SpectralConfig) -> float:
        return float(cfg.basis.evaluate(self.field, np.pi, derivative=1))


def _rhs(y, v, lam, nu):
    return v, (y * y * y - lam * y) / nu


def _rk4(y, v, lam, nu, h, n, record=False):
    """Classical RK4 for the planar system; works on floats or arrays."""
    if record:
        ys, vs = [y], [v]
    for _ in range(n):
        k1y, k1v = _rhs(y, v, lam, nu)
        k2y, k2v = _rhs(y + 0.5 * h * k1y, v + 0.5 * h * k1v, lam, nu)
        k3y, k3v = _rhs(y + 0.5 * h * k2y, v + 0.5 * h * k2v, lam, nu)
        k4y, k4v = _rhs(y + h * k3y, v + h * k3v, lam, nu)
        y = y + h / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        v = v + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        if record:
            ys.append(y)
            vs.append(v)
    if record:
        return np.asarray(ys), np.asarray(vs)
    return y, v


def _steps_for(x_end: float, step: float) -> tuple[int, float]:
    n = max(1, int(math.ceil(abs(x_end) / step - 1e-9)))
    return n, x_end / n


def shoot_ivp(theta, p: ModelParams, x_end: float = np.pi, step: float = 1e-4):
    """Integrate ``y(0) = 0, y'(0) = theta`` to ``x_end`` with RK4.

    ``theta`` may be a float or an array; returns ``(y(x_end), y'(x_end))``.
    The step is adjusted down so that it divides ``x_end``.
    """
    n, h = _steps_for(x_end, step)
    return _rk4(0.0 * np.asarray(theta, dtype=float) if np.ndim(theta) else 0.0,
                theta if np.ndim(theta) else float(theta), p.lam, p.nu, h, n)


def shoot_profile(theta: float, p: ModelParams, x_end: float = np.pi, step: float = 1e-4):
    """Nodes, values and slopes of the shooting solution on ``[0, x_end]``."""
    n, h = _steps_for(x_end, step)
    ys, vs = _rk4(0.0, float(theta), p.lam, p.nu, h, n, record=True)
    return h * np.arange(n + 1), ys, vs


def first_integral(y, v, p: ModelParams):
    """``-nu/2 v^2 + y^4/4 - lam/2 y^2``, equal to ``-nu/2 theta^2`` along solutions."""
    return -0.5 * p.nu * v**2 + 0.25 * y**4 - 0.5 * p.lam * y**2


def expected_count(p: ModelParams) -> int:
    """Number of stationary states: one pair per unstable Dirichlet mode of zero."""
    ratio = p.lam / p.nu
    return 1 + 2 * int(np.sum(np.arange(1, int(math.sqrt(ratio)) + 2) ** 2 < ratio))


def _check_nondegenerate(p: ModelParams):
    root = math.sqrt(p.lam / p.nu)
    if p.lam > p.nu and abs(root - round(root)) < 1e-9:
        raise ValueError(
            f"lam/nu = {p.lam / p.nu} is a perfect square; a branch of stationary states "
            "bifurcates from zero there"
        )


def _galerkin_residual(c: np.ndarray, p: ModelParams, cfg: SpectralConfig) -> np.ndarray:
    basis = cfg.basis
    return p.nu * basis.k**2 * c - p.lam * c + basis.from_grid(basis.to_grid(c) ** 3)


def refine_steady_state(c: np.ndarray, p: ModelParams, cfg: SpectralConfig, tol: float = 1e-13) -> np.ndarray:
    """Newton iteration on the Galerkin stationary equation."""
    basis = cfg.basis
    c = np.array(c, dtype=float)
    for _ in range(30):
        r = _galerkin_residual(c, p, cfg)
        if np.linalg.norm(r) < tol:
            break
        jac = np.diag(p.nu * basis.k**2 - p.lam) + 3.0 * basis.multiplier(basis.to_grid(c) ** 2)
        c = c - np.linalg.solve(jac, r)
    return c


def steady_state_residual(c: np.ndarray, p: ModelParams, cfg: SpectralConfig) -> float:
    """Max of ``|-nu phi'' + phi^3 - lam phi|`` over the collocation points."""
    basis = cfg.basis
    second = basis.to_grid(-(basis.k**2) * c)
    phi = basis.to_grid(c)
    return float(np.max(np.abs(-p.nu * second + phi**3 - p.lam * phi)))


def _linearization(c: np.ndarray, p: ModelParams, cfg: SpectralConfig) -> np.ndarray:
    basis = cfg.basis
    return np.diag(p.lam - p.nu * basis.k**2) - 3.0 * basis.multiplier(basis.to_grid(c) ** 2)


def _theta_roots(p: ModelParams) -> np.ndarray:
    """Positive shooting slopes with ``y(pi; theta) = 0``."""
    theta_max = p.lam / math.sqrt(2 * p.nu)
    thetas = theta_max * np.arange(1, SCAN_POINTS + 1) / SCAN_POINTS
    h = np.pi / SCAN_STEPS
    end, _ = _rk4(np.zeros_like(thetas), thetas, p.lam, p.nu, h, SCAN_STEPS)
    idx = np.flatnonzero(np.sign(end[1:]) * np.sign(end[:-1]) < 0)
    lo, hi = thetas[idx], thetas[idx + 1]
    f_lo = end[idx]
    # safeguarded Newton using the variational equation in theta
    theta = lo - f_lo * (hi - lo) / (end[idx + 1] - f_lo)
    for _ in range(50):
        y, v, dy, dv = np.zeros_like(theta), theta.copy(), np.zeros_like(theta), np.ones_like(theta)
        for _ in range(SCAN_STEPS):
            def f(y, v, dy, dv):
                return v, (y**3 - p.lam * y) / p.nu, dv, (3 * y**2 - p.lam) * dy / p.nu
            k1 = f(y, v, dy, dv)
            k2 = f(*(s + 0.5 * h * k for s, k in zip((y, v, dy, dv), k1)))
            k3 = f(*(s + 0.5 * h * k for s, k in zip((y, v, dy, dv), k2)))
            k4 = f(*(s + h * k for s, k in zip((y, v, dy, dv), k3)))
            y, v, dy, dv = (
                s + h / 6.0 * (a + 2 * b + 2 * c + d) for s, a, b, c, d in zip((y, v, dy, dv), k1, k2, k3, k4)
            )
        same = np.sign(y) == np.sign(f_lo)
        lo = np.where(same, theta, lo)
        hi = np.where(same, hi, theta)
        f_lo = np.where(same, y, f_lo)
        step = theta - y / dy
        inside = (step > lo) & (step < hi)
        new = np.where(inside, step, 0.5 * (lo + hi))
        if np.all(np.abs(new - theta) < 1e-12 * max(1.0, theta_max)):
            theta = new
            break
        theta = new
    return np.sort(theta)[::-1]


def _field_from_slope(theta: float, p: ModelParams, cfg: SpectralConfig, samples: int = 2048) -> np.ndarray:
    """Sine coefficients of the shooting profile by a dense type-I sine transform."""
    h = np.pi / samples
    ys, _ = _rk4(0.0, float(theta), p.lam, p.nu, h, samples, record=True)
    x = h * np.arange(1, samples)
    k = cfg.basis.k
    return math.sqrt(2 / np.pi) * h * (np.sin(np.outer(k, x)) @ ys[1:-1])


def enumerate_steady_states(p: ModelParams, cfg: SpectralConfig) -> list[SteadyState]:
    """All stationary states, ordered ``phi_{-n}, ..., phi_0, ..., phi_n``.

    Raises
    ------
    ValueError
        When ``lam/nu`` sits at a bifurcation point.
    StructuralError
        When the number of states found differs from :func:`expected_count`.
    """
    _check_nondegenerate(p)
    states = [_make_state(np.zeros(cfg.M), 0, p, cfg)]
    if p.lam > p.nu:
        for k, theta in enumerate(_theta_roots(p), start=1):
            c = refine_steady_state(_field_from_slope(theta, p, cfg), p, cfg)
            states.append(_make_state(c, k, p, cfg))
            states.append(_make_state(-c, -k, p, cfg))
    states.sort(key=lambda s: s.index_k)
    expected = expected_count(p)
    if len(states) != expected:
        raise StructuralError(f"found {len(states)} stationary states, expected {expected}")
    return states


def _make_state(c: np.ndarray, k: int, p: ModelParams, cfg: SpectralConfig) -> SteadyState:
    top = float(np.linalg.eigvalsh(_linearization(c, p, cfg))[-1])
    theta = float(cfg.basis.evaluate(c, 0.0, derivative=1))
    return SteadyState(field=c, theta=theta, index_k=k, stable=top < 0, top_eigenvalue=top)


def find_state(states: list[SteadyState], k: int) -> SteadyState:
    for s in states:
        if s.index_k == k:
            return s
    raise KeyError(f"no stationary state with index {k}")


def energy(state: SteadyState, p: ModelParams, cfg: SpectralConfig) -> float:
    return float(lyapunov_energy(state.field, p, cfg))


class _Profile:
    """Member of a path of extended stationary states at one value of tau."""

    def __init__(self, tau: float, start: SteadyState, end: SteadyState, p: ModelParams, cfg: SpectralConfig):
        self.tau, self.p, self.cfg = tau, p, cfg
        self.a, self.b = cfg.a, cfg.b
        basis = cfg.basis
        self.blend = (1.0 - tau) * start.field + tau * end.field
        theta = (1.0 - tau) * start.theta + tau * end.theta
        vartheta = (1.0 - tau) * start.slope_at_pi(cfg) + tau * end.slope_at_pi(cfg)
        self.left = self._solve(0.0, theta, self.a) if self.a > 0 else None
        self.right = self._solve(np.pi, vartheta, self.b) if self.b < np.pi else None
        ya, va = self._outer(self.a, self.left, 0.0, theta)
        yb, vb = self._outer(self.b, self.right, 0.0, vartheta)
        # Hermite cubic carrying the mismatch between outer pieces and the blend
        da = ya - basis.evaluate(self.blend, self.a)
        sa = va - basis.evaluate(self.blend, self.a, 1)
        db = yb - basis.evaluate(self.blend, self.b)
        sb = vb - basis.evaluate(self.blend, self.b, 1)
        L = self.b - self.a
        c2 = (3 * (db - da) / L - 2 * sa - sb) / L
        c3 = (sa + sb - 2 * (db - da) / L) / L**2
        self.cubic = np.array([da, sa, c2, c3])

    def _solve(self, x0, slope, x1):
        lam, nu = self.p.lam, self.p.nu
        return solve_ivp(
            lambda x, s: [s[1], (s[0] ** 3 - lam * s[0]) / nu],
            (x0, x1),
            [0.0, slope],
            method="DOP853",
            rtol=1e-13,
            atol=1e-14,
            dense_output=True,
        ).sol

    @staticmethod
    def _outer(x, sol, y0, v0):
        if sol is None:
            return y0, v0
        y, v = sol(x)
        return float(y), float(v)

    def _poly(self, x, derivative):
        c = self.cubic
        s = x - self.a
        if derivative == 0:
            return c[0] + s * (c[1] + s * (c[2] + s * c[3]))
        if derivative == 1:
            return c[1] + s * (2 * c[2] + 3 * s * c[3])
        return 2 * c[2] + 6 * c[3] * s

    def values(self, x, derivative: int = 0) -> np.ndarray:
        """Profile values (``derivative`` 0, 1 or 2) at points of ``[0, pi]``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        lam, nu = self.p.lam, self.p.nu
        for mask, sol in ((x < self.a, self.left), (x > self.b, self.right)):
            if np.any(mask):
                y, v = sol(x[mask])
                out[mask] = (y, v, (y**3 - lam * y) / nu)[derivative]
        mid = (x >= self.a) & (x <= self.b)
        if np.any(mid):
            xm = x[mid]
            out[mid] = self.cfg.basis.evaluate(self.blend, xm, derivative) + self._poly(xm, derivative)
        return out

    def forcing(self, x) -> np.ndarray:
        """``-nu y'' + y^3 - lam y`` inside the window and zero outside."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = self.values(x)
        h = -self.p.nu * self.values(x, 2) + y**3 - self.p.lam * y
        return np.where((x >= self.a) & (x <= self.b), h, 0.0)


@dataclass
class SteadyPath:
    """Samples of a C1 path of extended stationary states ``(y(tau), h(tau))``.

    Attributes
    ----------
    tau_grid : ndarray
        Uniform grid on [0, 1].
    y_samples : ndarray
        Sine coefficients of ``y(tau)``, shape ``(len(tau_grid), M)``.
    h_samples : ndarray
        Sine coefficients of the forcing ``h(tau)``.
    h_psi : ndarray
        Psi coefficients of ``h(tau)`` on the window, ``N_noise`` modes.
    endpoints : tuple of SteadyState
    """

    tau_grid: np.ndarray
    y_samples: np.ndarray
    h_samples: np.ndarray
    h_psi: np.ndarray
    endpoints: tuple
    profiles: list = field(repr=False, default_factory=list)

    def __post_init__(self):
        self._y = CubicSpline(self.tau_grid, self.y_samples, axis=0)
        self._h = CubicSpline(self.tau_grid, self.h_samples, axis=0)
        self._hp = CubicSpline(self.tau_grid, self.h_psi, axis=0)

    def y(self, tau: float) -> np.ndarray:
        return self._y(np.clip(tau, 0.0, 1.0))

    def h(self, tau: float) -> np.ndarray:
        return self._h(np.clip(tau, 0.0, 1.0))

    def h_psi_at(self, tau: float) -> np.ndarray:
        return self._hp(np.clip(tau, 0.0, 1.0))


def build_steady_path(
    start: SteadyState, end: SteadyState, p: ModelParams, cfg: SpectralConfig, tau_steps: int = 64
) -> SteadyPath:
    """Path of extended stationary states from ``start`` to ``end``.

    For each ``tau`` the outer pieces on ``[0, a]`` and ``[b, pi]`` are the
    shooting solutions with slopes interpolated linearly between the
    endpoint slopes at 0 and at pi. Inside the window the profile is the
    linear blend of the two endpoint states plus a Hermite cubic that
    matches value and slope of the outer pieces, so ``y(0)`` and ``y(1)``
    are exactly the endpoint states and ``h`` vanishes there.
    """
    if tau_steps < 1:
        raise ValueError("tau_steps must be positive")
    taus = np.linspace(0.0, 1.0, tau_steps + 1)
    basis = cfg.basis
    nodes, weights = np.polynomial.legendre.leggauss(128)
    xw = 0.5 * (cfg.b - cfg.a) * nodes + 0.5 * (cfg.b + cfg.a)
    ww = 0.5 * (cfg.b - cfg.a) * weights
    psi = psi_values(np.arange(1, cfg.N_noise + 1), xw, cfg.a, cfg.b)
    profiles, ys, hs, hps = [], [], [], []
    for tau in taus:
        prof = _Profile(tau, start, end, p, cfg)
        profiles.append(prof)
        ys.append(basis.project_function(prof.values, n_nodes=128, breaks=(cfg.a, cfg.b)))
        hw = prof.forcing(xw)
        hs.append((ww * hw) @ (math.sqrt(2 / np.pi) * np.sin(np.outer(xw, basis.k))))
        hps.append((ww * hw) @ psi)
    return SteadyPath(taus, np.array(ys), np.array(hs), np.array(hps), (start, end), profiles)
