"""Sine bases, collocation transforms and the localized input operators.

Fields on (0, pi) with homogeneous Dirichlet conditions are stored as
coefficient vectors on ``e_k(x) = sqrt(2/pi) sin(kx)``, ``k = 1..M``.
Controls and noise live on the window ``[a, b]`` and are stored on

    psi_j(x) = sqrt(2/(b-a)) sin(j pi (x-a)/(b-a)),   x in [a, b],

extended by zero. Both are plain ``numpy`` arrays; the last axis is the
mode axis so batches of fields broadcast naturally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

__all__ = [
    "SineBasis",
    "SpectralConfig",
    "NoiseSpec",
    "overlap_matrix",
    "indicator_gram",
    "apply_B",
    "apply_B_star",
    "project_PN",
    "psi_values",
]


def _cos_integral(alpha, phase, a, b):
    """Integral of cos(alpha*x + phase) over [a, b], stable as alpha -> 0."""
    length = b - a
    mid = 0.5 * (a + b)
    return length * np.cos(alpha * mid + phase) * np.sinc(alpha * length / (2 * np.pi))


class SineBasis:
    """Dirichlet sine basis with a uniform interior collocation grid.

    Parameters
    ----------
    M : int
        Number of retained modes.
    Q : int
        Number of interior collocation points ``x_i = i pi / (Q + 1)``.

    Notes
    -----
    The analysis map is the type-I discrete sine transform written as a
    dense matrix. It inverts synthesis exactly for trigonometric
    polynomials of degree at most ``Q``, so with ``Q >= 2M`` the cube of an
    ``M``-mode field is projected back onto the first ``M`` modes without
    aliasing.
    """

    def __init__(self, M: int, Q: int):
        if M < 1 or Q < M:
            raise ValueError(f"need 1 <= M <= Q, got M={M}, Q={Q}")
        self.M = M
        self.Q = Q
        self.k = np.arange(1, M + 1, dtype=float)
        self.x = np.pi * np.arange(1, Q + 1) / (Q + 1)
        self.weight = np.pi / (Q + 1)
        self.synth = math.sqrt(2 / np.pi) * np.sin(np.outer(self.x, self.k))
        self.analysis = self.weight * self.synth.T

    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        """Values at the collocation points."""
        return coeffs @ self.synth.T

    def from_grid(self, values: np.ndarray) -> np.ndarray:
        """Coefficients of the grid function on the first M modes."""
        return values @ self.analysis.T

    def multiplier(self, g: np.ndarray) -> np.ndarray:
        """Galerkin matrix of multiplication by the grid function ``g``.

        The result is symmetric because the quadrature weights are uniform.
        """
        return self.analysis @ (g[:, None] * self.synth)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid rule on [0, pi] for grid functions vanishing at the ends."""
        return self.weight * values.sum(axis=-1)

    def evaluate(self, coeffs: np.ndarray, x, derivative: int = 0) -> np.ndarray:
        """Evaluate the sine series (or a derivative) at arbitrary points."""
        x = np.asarray(x, dtype=float)
        arg = np.multiply.outer(x, self.k)
        c = math.sqrt(2 / np.pi) * coeffs * self.k**derivative
        table = [np.sin, np.cos, lambda t: -np.sin(t), lambda t: -np.cos(t)]
        return table[derivative % 4](arg) @ c

    def norm(self, coeffs: np.ndarray, order: int = 0) -> np.ndarray:
        """Spectral H^order norm (order 0 gives the L2 norm)."""
        return np.sqrt(np.sum(self.k ** (2 * order) * coeffs**2, axis=-1))

    def project_function(self, f, n_nodes: int = 256, breaks=()) -> np.ndarray:
        """Project a callable onto the basis by piecewise Gauss-Legendre quadrature.

        ``breaks`` lists interior points where ``f`` may be non-smooth.
        """
        edges = [0.0, *sorted(t for t in breaks if 0.0 < t < np.pi), np.pi]
        nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
        out = np.zeros(self.M)
        for lo, hi in zip(edges[:-1], edges[1:]):
            if hi - lo <= 0:
                continue
            xs = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
            ws = 0.5 * (hi - lo) * weights
            basis = math.sqrt(2 / np.pi) * np.sin(np.outer(xs, self.k))
            out += (ws * f(xs)) @ basis
        return out


@dataclass(frozen=True)
class SpectralConfig:
    """Discretization and window of the localized input.

    Attributes
    ----------
    M : int
        Number of sine modes for fields.
    a, b : float
        Control/noise window ``0 <= a < b <= pi``.
    N_noise : int
        Number of psi modes carrying noise or control.
    quad_points : int, optional
        Collocation size, defaults to ``2 * M``.
    """

    M: int = 64
    a: float = np.pi / 4
    b: float = 3 * np.pi / 4
    N_noise: int = 16
    quad_points: int | None = None

    def __post_init__(self):
        if self.quad_points is None:
            object.__setattr__(self, "quad_points", 2 * self.M)
        if self.M < 1:
            raise ValueError("M must be positive")
        if not 0.0 <= self.a < self.b <= np.pi + 1e-15:
            raise ValueError(f"window must satisfy 0 <= a < b <= pi, got a={self.a}, b={self.b}")
        if not 1 <= self.N_noise <= self.M:
            raise ValueError("N_noise must lie in [1, M]")
        if self.quad_points < 2 * self.M:
            raise ValueError("quad_points must be at least 2*M")

    @cached_property
    def basis(self) -> SineBasis:
        return SineBasis(self.M, self.quad_points)

    @cached_property
    def overlap(self) -> np.ndarray:
        return overlap_matrix(self)

    @cached_property
    def window_gram(self) -> np.ndarray:
        return indicator_gram(self.M, self.a, self.b)


@dataclass(frozen=True)
class NoiseSpec:
    """Amplitudes ``b_j`` of the localized noise and the root seed.

    ``B0`` bounds ``sum j^2 b_j^2``; when omitted it is taken as that sum.
    """

    b: np.ndarray
    seed: int = 0
    B0: float | None = None
    n_active: int | None = field(default=None)

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float).copy()
        b.setflags(write=False)
        object.__setattr__(self, "b", b)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("b must be a non-empty vector")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        j = np.arange(1, b.size + 1)
        weighted = float(np.sum(j**2 * b**2))
        if self.B0 is None:
            object.__setattr__(self, "B0", weighted)
        elif weighted > self.B0 * (1 + 1e-12):
            raise ValueError(f"sum j^2 b_j^2 = {weighted} exceeds B0 = {self.B0}")
        if self.n_active is None:
            nz = np.flatnonzero(b == 0)
            object.__setattr__(self, "n_active", int(nz[0]) if nz.size else b.size)
        elif np.any(b[: self.n_active] == 0):
            raise ValueError("b_j must be nonzero for j <= n_active")

    @property
    def N(self) -> int:
        return self.b.size

    @classmethod
    def power_law(cls, n: int, power: float = 2.0, scale: float = 1.0, seed: int = 0) -> NoiseSpec:
        """Amplitudes ``scale * j**-power`` for ``j = 1..n``."""
        return cls(scale * np.arange(1, n + 1, dtype=float) ** -power, seed=seed)

    def scaled(self, factor: float) -> NoiseSpec:
        return NoiseSpec(factor * self.b, seed=self.seed)


def overlap_matrix(cfg: SpectralConfig) -> np.ndarray:
    """Matrix with entry ``(k, j) = <psi_j, e_k>`` from the closed-form integral."""
    a, b = cfg.a, cfg.b
    length = b - a
    k = np.arange(1, cfg.M + 1, dtype=float)[:, None]
    omega = np.pi * np.arange(1, cfg.N_noise + 1, dtype=float)[None, :] / length
    phase = -omega * a
    scale = math.sqrt(2 / length) * math.sqrt(2 / np.pi)
    minus = _cos_integral(omega - k, phase, a, b)
    plus = _cos_integral(omega + k, phase, a, b)
    return 0.5 * scale * (minus - plus)


def indicator_gram(M: int, a: float, b: float) -> np.ndarray:
    """Matrix of ``int_a^b e_k e_l dx``, i.e. multiplication by the window indicator."""
    k = np.arange(1, M + 1, dtype=float)
    kk, ll = np.meshgrid(k, k, indexing="ij")
    return (_cos_integral(kk - ll, 0.0, a, b) - _cos_integral(kk + ll, 0.0, a, b)) / np.pi


def psi_values(j, x, a: float, b: float) -> np.ndarray:
    """Values of ``psi_j`` at ``x`` (zero outside the window)."""
    x = np.asarray(x, dtype=float)
    length = b - a
    inside = (x >= a) & (x <= b)
    vals = math.sqrt(2 / length) * np.sin(np.multiply.outer(x - a, np.pi * np.asarray(j) / length))
    if vals.ndim > inside.ndim:
        inside = inside[..., None]
    return np.where(inside, vals, 0.0)


def _check_noise(noise: NoiseSpec, cfg: SpectralConfig):
    if noise.N != cfg.N_noise:
        raise ValueError(f"noise has {noise.N} amplitudes but N_noise={cfg.N_noise}")


def apply_B(v: np.ndarray, noise: NoiseSpec, cfg: SpectralConfig) -> np.ndarray:
    """Map psi coefficients ``v`` to the field ``sum_j b_j v_j psi_j``."""
    _check_noise(noise, cfg)
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != cfg.N_noise:
        raise ValueError(f"control has {v.shape[-1]} modes, expected {cfg.N_noise}")
    return (v * noise.b) @ cfg.overlap.T


def apply_B_star(u: np.ndarray, noise: NoiseSpec, cfg: SpectralConfig) -> np.ndarray:
    """Psi coefficients ``b_j <u, psi_j>`` of the adjoint input map."""
    _check_noise(noise, cfg)
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != cfg.M:
        raise ValueError(f"field has {u.shape[-1]} modes, expected {cfg.M}")
    return (u @ cfg.overlap) * noise.b


def project_PN(v: np.ndarray, N: int) -> np.ndarray:
    """Keep the first ``N`` psi modes and zero the rest."""
    v = np.asarray(v, dtype=float)
    if not 0 <= N <= v.shape[-1]:
        raise ValueError(f"N={N} outside [0, {v.shape[-1]}]")
    out = v.copy()
    out[..., N:] = 0.0
    return out
