"""Controllability Gramians and Gramian-regularized stabilization.

The linear control system on a window ``[s, t]`` is

    z' = nu z_xx - g z + B P_N zeta,   z(s) = z_s,

discretized with the IMEX step of :mod:`acmix.linearization` and a control
held constant on each step. With the left-endpoint rule for the control
norm, the discrete control map ``A`` satisfies ``A A^* = G`` exactly, where

    G = dt * sum_n  Phi_{n+1,t} L^{-1} B P_N B^* L^{-1} Phi_{n+1,t}^T.

The regularized control ``zeta = P_N B^* A^*-sweep of w`` with
``w = -(G + beta)^{-1} J z_s`` is the minimizer of
``1/2 |zeta|^2 + 1/(2 beta) |z(t)|^2``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from .dynamics import ControlSignal, ModelParams, TimeGrid, Trajectory
from .linearization import PotentialTrajectory, _Linear, flow_J, potential_from_trajectory
from .spectral import NoiseSpec, SpectralConfig

logger = logging.getLogger(__name__)

__all__ = [
    "Gramian",
    "StabilizationReport",
    "assemble_gramian",
    "regularized_control",
    "duality_gap",
    "terminal_identity_error",
    "observability_constant",
    "malliavin_matrix",
    "operator_bounds",
]


@dataclass
class Gramian:
    """Symmetric positive semidefinite Gramian on ``[s, t]`` with ``N`` active modes."""

    matrix: np.ndarray
    s: float
    t: float
    N: int
    _factors: dict = field(default_factory=dict, repr=False)

    def solve(self, rhs: np.ndarray, beta: float) -> np.ndarray:
        """Solve ``(G + beta) x = rhs`` by Cholesky, caching the factor per ``beta``."""
        if not beta > 0:
            raise ValueError("beta must be positive")
        if beta not in self._factors:
            shifted = self.matrix + beta * np.eye(self.matrix.shape[0])
            try:
                self._factors[beta] = linalg.cho_factor(shifted, lower=True)
            except linalg.LinAlgError as exc:
                raise np.linalg.LinAlgError(f"G + beta is not positive definite (beta={beta})") from exc
        return linalg.cho_solve(self._factors[beta], rhs)

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


@dataclass
class StabilizationReport:
    """Outcome of one regularized stabilization window."""

    decay_ratio: float
    control_cost: float
    predicted_bound: float
    bhat_N: float
    uncontrolled_ratio: float = float("nan")
    N: int = 0
    beta: float = 0.0
    resolvent_norm: float = 0.0
    scaled_control_norm: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


class _InputMap:
    """Rows of ``b_j <., psi_j>`` for ``j <= N`` composed with ``L^{-1}``."""

    def __init__(self, lin: _Linear, noise: NoiseSpec, N: int, weighted: bool = True):
        cfg = lin.cfg
        if not 0 <= N <= cfg.N_noise:
            raise ValueError(f"N={N} outside [0, {cfg.N_noise}]")
        weights = noise.b[:N] if weighted else np.ones(N)
        # rows: N x M, maps a field to (weighted) psi coefficients after L^{-1}
        self.rows = (weights[:, None] * cfg.overlap[:, :N].T) * lin.inv[None, :]
        self.lift = cfg.overlap[:, :N] * noise.b[:N]
        self.N = N


def _window(s: float, t: float):
    if not s < t:
        raise ValueError(f"need s < t, got s={s}, t={t}")
    if t - s > 1.0 + 1e-12:
        warnings.warn(f"window length {t - s} exceeds 1; formulas remain defined", stacklevel=3)


def assemble_gramian(
    pot: PotentialTrajectory,
    noise: NoiseSpec,
    N: int,
    s: float,
    t: float,
    p: ModelParams,
    cfg: SpectralConfig,
) -> Gramian:
    """Assemble the Gramian from one backward adjoint sweep of the identity."""
    _window(s, t)
    lin = _Linear(pot, p, cfg)
    i, j = lin.indices(s, t)
    inp = _InputMap(lin, noise, N)
    G = np.zeros((cfg.M, cfg.M))
    if N > 0:
        Y = np.eye(cfg.M)
        for n in range(j - 1, i - 1, -1):
            Z = inp.rows @ Y
            G += Z.T @ Z
            Y = lin.backward(n, Y.T).T
        G *= lin.dt
    G = 0.5 * (G + G.T)
    if not np.all(np.isfinite(G)):
        raise np.linalg.LinAlgError("non-finite Gramian")
    return Gramian(G, s, t, N)


def malliavin_matrix(
    traj: Trajectory, noise: NoiseSpec, N: int, s: float, t: float, p: ModelParams, cfg: SpectralConfig
) -> Gramian:
    """Truncated Malliavin matrix along a realized path."""
    if traj.noise_path is None:
        raise ValueError("trajectory carries no noise record")
    return assemble_gramian(potential_from_trajectory(traj, p, cfg), noise, N, s, t, p, cfg)


def operator_bounds(G: Gramian, beta: float) -> tuple[float, float]:
    """Norms of ``(G+beta)^{-1/2}`` and ``(G+beta)^{-1/2} A``.

    Since ``A A^* = G``, the singular values of the second operator are
    ``sqrt(sigma / (sigma + beta))`` over the eigenvalues ``sigma`` of ``G``.
    """
    sig = np.clip(G.eigvalsh(), 0.0, None)
    return float(1.0 / math.sqrt(sig.min() + beta)), float(np.sqrt(sig / (sig + beta)).max())


def _control_samples(w, lin: _Linear, inp: _InputMap, i: int, j: int) -> np.ndarray:
    """``P_N B^*`` applied to the adjoint sweep of ``w``, left-endpoint samples."""
    samples = np.zeros((j - i + 1, inp.N))
    y = np.array(w, dtype=float)
    samples[-1] = (inp.lift.T @ y) if inp.N else 0.0
    for n in range(j - 1, i - 1, -1):
        samples[n - i] = inp.rows @ y
        y = lin.backward(n, y)
    return samples


def _closed_loop(z_s, samples, lin: _Linear, inp: _InputMap, i: int, j: int) -> np.ndarray:
    z = np.array(z_s, dtype=float)
    for n in range(i, j):
        z = lin.forward(n, z)
        if inp.N:
            z = z + lin.dt * lin.inv * (inp.lift @ samples[n - i])
    return z


def _solve_window(z_s, pot, noise, N, beta, s, t, p, cfg):
    _window(s, t)
    if not beta > 0:
        raise ValueError("beta must be positive")
    lin = _Linear(pot, p, cfg)
    i, j = lin.indices(s, t)
    inp = _InputMap(lin, noise, N)
    G = assemble_gramian(pot, noise, N, s, t, p, cfg)
    Jz = flow_J(z_s, pot, s, t, p, cfg)
    w = -G.solve(Jz, beta)
    samples = _control_samples(w, lin, inp, i, j)
    z_t = _closed_loop(z_s, samples, lin, inp, i, j)
    return G, Jz, w, samples, z_t, (lin, inp, i, j)


def regularized_control(
    z_s: np.ndarray,
    pot: PotentialTrajectory,
    noise: NoiseSpec,
    N: int,
    beta: float,
    s: float,
    t: float,
    p: ModelParams,
    cfg: SpectralConfig,
    fitted_C: float = 1.0,
) -> tuple[ControlSignal, StabilizationReport]:
    """Regularized stabilizing control on ``[s, t]`` and its closed-loop report."""
    G, Jz, w, samples, z_t, (lin, inp, i, j) = _solve_window(z_s, pot, noise, N, beta, s, t, p, cfg)
    grid = TimeGrid(s, lin.dt, j - i)
    signal = ControlSignal(grid, samples)
    norm0 = float(np.linalg.norm(z_s))
    bhat = float(np.max(1.0 / np.abs(noise.b[:N]))) if N else math.inf
    res_norm, scaled = operator_bounds(G, beta)
    if res_norm > beta**-0.5 * (1 + 1e-9) or scaled > 1 + 1e-9:
        raise np.linalg.LinAlgError("resolvent bounds violated; Gramian is not PSD")
    shape = bhat * math.sqrt(beta) + (N**-0.5 if N else math.inf)
    report = StabilizationReport(
        decay_ratio=float(np.linalg.norm(z_t)) / norm0 if norm0 > 0 else 0.0,
        control_cost=signal.norm(),
        predicted_bound=fitted_C * shape,
        bhat_N=bhat,
        uncontrolled_ratio=float(np.linalg.norm(Jz)) / norm0 if norm0 > 0 else 0.0,
        N=N,
        beta=beta,
        resolvent_norm=res_norm,
        scaled_control_norm=scaled,
    )
    return signal, report


def duality_gap(
    z_s: np.ndarray,
    pot: PotentialTrajectory,
    noise: NoiseSpec,
    N: int,
    beta: float,
    s: float,
    t: float,
    p: ModelParams,
    cfg: SpectralConfig,
) -> float:
    """Relative gap between the primal and dual values at the computed optimum.

    The primal value uses the sampled control and the terminal state of an
    independent forward run; the dual value ``-J*(w)`` uses only the Gramian
    and ``J z_s``.
    """
    G, Jz, w, samples, z_t, (lin, *_) = _solve_window(z_s, pot, noise, N, beta, s, t, p, cfg)
    control_sq = lin.dt * float(np.sum(samples[:-1] ** 2))
    primal = 0.5 * control_sq + float(z_t @ z_t) / (2 * beta)
    dual_fn = 0.5 * float(w @ (G.matrix @ w) + beta * (w @ w)) + float(w @ Jz)
    dual = -dual_fn
    return abs(primal - dual) / max(1.0, primal)


def terminal_identity_error(z_s, pot, noise, N, beta, s, t, p, cfg) -> float:
    """``|z(t) + beta w|`` for the closed loop; zero in exact arithmetic."""
    _, _, w, _, z_t, _ = _solve_window(z_s, pot, noise, N, beta, s, t, p, cfg)
    return float(np.linalg.norm(z_t + beta * w))


def observability_constant(
    pot: PotentialTrajectory,
    noise: NoiseSpec,
    N: int,
    s: float,
    t: float,
    p: ModelParams,
    cfg: SpectralConfig,
    trials: int = 32,
    seed: int = 0,
    terminal: np.ndarray | None = None,
) -> tuple[float, float]:
    """Empirical constant of the truncated observability inequality.

    Returns ``(C_obs, share)``: the largest ratio
    ``|y(s)| / (|P_N 1_(a,b) y|_L2(s,t) + N^{-1/2} |y(t)|)`` over the trials,
    and the largest share of the remainder term in the denominator.
    ``terminal`` replaces the random terminal data by given fields.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if N < 1:
        raise ValueError("N must be at least 1")
    lin = _Linear(pot, p, cfg)
    i, j = lin.indices(s, t)
    inp = _InputMap(lin, noise, N, weighted=False)
    if terminal is None:
        Y = np.random.default_rng(seed).standard_normal((trials, cfg.M))
    else:
        Y = np.atleast_2d(np.asarray(terminal, dtype=float))
    norms_t = np.linalg.norm(Y, axis=1)
    observed = np.zeros(Y.shape[0])
    y = Y.copy()
    for n in range(j - 1, i - 1, -1):
        observed += np.sum((y @ inp.rows.T) ** 2, axis=1)
        y = lin.backward(n, y)
    observed = np.sqrt(lin.dt * observed)
    remainder = norms_t / math.sqrt(N)
    ratio = np.linalg.norm(y, axis=1) / (observed + remainder)
    return float(ratio.max()), float(np.max(remainder / (observed + remainder)))
