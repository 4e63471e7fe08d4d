"""Quasi-static feedback transfer between stationary states.

Along a path ``(y(tau), h(tau))`` of extended stationary states the
deviation ``z = w - y(eps t)`` is driven by the slow motion of the path.
The operator ``A(tau) = nu d_xx + lam - 3 y(tau)^2`` has finitely many
eigenvalues above ``-eta``; those ``m`` modes are stabilized by a control

    zeta(t, x) = sum_{j <= m} zeta_j(t) 1_[a,b](x) e_j(eps t, x),
    zeta_j' = alpha_j,   alpha = K(eps t) X,   X = (z_1..z_m, zeta_1..zeta_m),

where ``K`` places the poles of the augmented pair ``(D, E)`` near -1.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import ControlSignal, ModelParams, TimeGrid, Trajectory, _check, _Stepper
from .gramian import regularized_control
from .linearization import constant_potential
from .spectral import NoiseSpec, SpectralConfig
from .steady import SteadyPath, SteadyState, StructuralError, build_steady_path

logger = logging.getLogger(__name__)

__all__ = [
    "EigenTrack",
    "FeedbackLaw",
    "TransferResult",
    "operator_matrix",
    "eigen_track",
    "kalman_check",
    "input_gram",
    "place_gain",
    "solve_lyapunov",
    "synthesize_feedback",
    "quasistatic_transfer",
    "local_epsilon_steer",
]

POLE_SPACING = 1e-3


def operator_matrix(y: np.ndarray, p: ModelParams, cfg: SpectralConfig) -> np.ndarray:
    """Galerkin matrix of ``nu d_xx + lam - 3 y^2`` (symmetric)."""
    basis = cfg.basis
    return np.diag(p.lam - p.nu * basis.k**2) - 3.0 * basis.multiplier(basis.to_grid(y) ** 2)


def _orthonormalize(V: np.ndarray) -> np.ndarray:
    """Symmetric (Lowdin) orthonormalization of the rows of ``V``."""
    S = V @ V.T
    w, U = np.linalg.eigh(S)
    return (U / np.sqrt(w)) @ U.T @ V


@dataclass
class EigenTrack:
    """Leading eigenpairs of ``A(tau)`` on a tau grid.

    ``values`` has shape ``(T, M)`` in descending order; ``vectors`` has shape
    ``(T, m, M)`` and holds the sign-aligned leading eigenvectors as fields.
    """

    tau_grid: np.ndarray
    values: np.ndarray
    vectors: np.ndarray
    m: int
    eta: float

    def at(self, tau: float) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated ``(lambda_1..m, e_1..m)`` at ``tau``."""
        tau = min(max(tau, 0.0), 1.0)
        grid = self.tau_grid
        i = min(int(np.searchsorted(grid, tau, side="right")) - 1, grid.size - 2)
        if grid.size == 1:
            return self.values[0, : self.m], self.vectors[0]
        s = (tau - grid[i]) / (grid[i + 1] - grid[i])
        vals = (1 - s) * self.values[i, : self.m] + s * self.values[i + 1, : self.m]
        if s == 0.0:
            return vals, self.vectors[i]
        vecs = _orthonormalize((1 - s) * self.vectors[i] + s * self.vectors[i + 1])
        return vals, vecs


def eigen_track(path: SteadyPath, p: ModelParams, cfg: SpectralConfig, m: int | None = None) -> EigenTrack:
    """Eigen-decomposition of ``A(tau)`` at every tau sample with sign alignment.

    ``m`` is the smallest count (at least 1) such that the next eigenvalue is
    negative for every tau, unless given explicitly.
    """
    values, vectors = [], []
    prev = None
    for y in path.y_samples:
        w, V = np.linalg.eigh(operator_matrix(y, p, cfg))
        w, V = w[::-1], V[:, ::-1].T.copy()
        if prev is not None:
            signs = np.sign(np.sum(V * prev, axis=1))
            signs[signs == 0] = 1.0
            V *= signs[:, None]
        prev = V
        values.append(w)
        vectors.append(V)
    values = np.array(values)
    vectors = np.array(vectors)
    if m is None:
        top = values.max(axis=0)
        m = max(1, int(np.argmax(top < 0)))
        if not np.any(top < 0):
            raise StructuralError("no negative spectral gap along the path")
    if np.any(values[:, m] >= 0):
        raise StructuralError(f"eigenvalue {m + 1} is not negative along the path")
    gap = values[:, m - 1] - values[:, m]
    if np.min(gap) < 1e-8:
        i = int(np.argmin(gap))
        raise StructuralError(f"eigenvalues {m} and {m + 1} meet at tau={path.tau_grid[i]:.4f}")
    eta = 0.5 * float(np.min(-values[:, m]))
    return EigenTrack(path.tau_grid.copy(), values, vectors[:, :m].copy(), m, eta)


def input_gram(cfg: SpectralConfig, N: int | None = None) -> np.ndarray:
    """Matrix of ``<P 1_[a,b] e_k, e_l>``; ``P`` is the identity or the first ``N`` psi modes."""
    if N is None:
        return cfg.window_gram
    O = cfg.overlap[:, :N]
    return O @ O.T


def kalman_check(track: EigenTrack, cfg: SpectralConfig, N: int | None = None) -> np.ndarray:
    """Smallest singular value of ``B(tau)_{jk} = <1_[a,b] e_k, e_j>`` per tau sample."""
    W = input_gram(cfg, N)
    out = np.empty(track.tau_grid.size)
    for i, E in enumerate(track.vectors):
        out[i] = np.linalg.svd(E @ W @ E.T, compute_uv=False).min()
    return out


def _poles(m: int, rate: float = 1.0) -> np.ndarray:
    return -rate - POLE_SPACING * np.arange(2 * m)


def place_gain(lam: np.ndarray, B: np.ndarray, poles: np.ndarray | None = None) -> np.ndarray:
    """Gain ``K`` placing the spectrum of ``[[diag(lam), B], [K]]`` at ``poles``.

    Writing ``s = diag(lam) z + B zeta`` the closed loop reads ``z' = s``,
    ``s' = -P1 s - P0 z`` with diagonal ``P1, P0``; pole pairs are assigned
    to the components in order.
    """
    m = lam.size
    poles = _poles(m) if poles is None else np.sort(np.asarray(poles, dtype=float))[::-1]
    if poles.size != 2 * m:
        raise ValueError("need 2m poles")
    r1, r2 = poles[0::2], poles[1::2]
    P1 = np.diag(-(r1 + r2))
    P0 = np.diag(r1 * r2)
    A = np.diag(lam)
    Binv = np.linalg.inv(B)
    return Binv @ np.hstack([-(A + P1) @ A - P0, -(A + P1) @ B])


def solve_lyapunov(A: np.ndarray) -> np.ndarray:
    """Solve ``Q A + A^T Q = -I`` through the Kronecker-product linear system."""
    n = A.shape[0]
    eye = np.eye(n)
    lhs = np.kron(eye, A.T) + np.kron(A.T, eye)
    q = np.linalg.solve(lhs, -eye.reshape(-1, order="F"))
    Q = q.reshape(n, n, order="F")
    return 0.5 * (Q + Q.T)


def _augmented(lam: np.ndarray, B: np.ndarray) -> np.ndarray:
    m = lam.size
    D = np.zeros((2 * m, 2 * m))
    D[:m, :m] = np.diag(lam)
    D[:m, m:] = B
    return D


def _closed_loop(lam, B, K):
    m = lam.size
    Acl = _augmented(lam, B)
    Acl[m:, :] = K
    return Acl


@dataclass
class FeedbackLaw:
    """Gains and Lyapunov matrices on the tau grid of an eigen track."""

    tau_grid: np.ndarray
    K_samples: np.ndarray
    Q_samples: np.ndarray
    placed_poles: np.ndarray
    lyapunov_residuals: np.ndarray
    closed_loop_abscissa: np.ndarray
    track: EigenTrack = field(repr=False)
    input_matrix: np.ndarray = field(repr=False)

    def gain(self, tau: float):
        """``(lambda, E, B, K)`` at ``tau`` from the interpolated eigenpairs."""
        lam, E = self.track.at(tau)
        B = E @ self.input_matrix @ E.T
        return lam, E, B, place_gain(lam, B, self.placed_poles)

    def to_dict(self) -> dict:
        return {
            "tau_grid": self.tau_grid.tolist(),
            "K": self.K_samples.tolist(),
            "Q": self.Q_samples.tolist(),
            "poles": self.placed_poles.tolist(),
            "m": self.track.m,
            "eta": self.track.eta,
        }


def synthesize_feedback(
    track: EigenTrack, cfg: SpectralConfig, N: int | None = None, poles=None, min_singular: float = 1e-8
) -> FeedbackLaw:
    """Pole placement and Lyapunov matrices at each tau sample."""
    sv = kalman_check(track, cfg, N)
    if np.min(sv) < min_singular:
        raise StructuralError(f"Kalman condition fails: smallest singular value {np.min(sv):.3e}")
    W = input_gram(cfg, N)
    poles = _poles(track.m) if poles is None else np.sort(np.asarray(poles, dtype=float))[::-1]
    Ks, Qs, res, absc = [], [], [], []
    for lam, E in zip(track.values[:, : track.m], track.vectors):
        B = E @ W @ E.T
        K = place_gain(lam, B, poles)
        Acl = _closed_loop(lam, B, K)
        Q = solve_lyapunov(Acl)
        Ks.append(K)
        Qs.append(Q)
        res.append(np.linalg.norm(Q @ Acl + Acl.T @ Q + np.eye(Acl.shape[0])))
        absc.append(np.max(np.linalg.eigvals(Acl).real))
    return FeedbackLaw(
        track.tau_grid.copy(), np.array(Ks), np.array(Qs), poles, np.array(res), np.array(absc), track, W
    )


@dataclass
class TransferResult:
    """Closed-loop transfer along a path.

    ``control`` holds the total applied forcing: psi coefficients when the
    input was truncated to ``N`` modes, field coefficients otherwise.
    ``vhat`` is the Lyapunov functional with the calibrated weight ``c``,
    and ``sandwich`` the range of ``vhat / (|zeta|^2 + |z|_H1^2)``.
    """

    trajectory: Trajectory
    defect: float
    control: ControlSignal
    times: np.ndarray
    vhat: np.ndarray
    sandwich: tuple
    c: float
    max_deviation: float
    violation_time: float | None
    m: int
    kalman_min: float
    lyapunov_residual: float


def quasistatic_transfer(
    start: SteadyState,
    end: SteadyState,
    epsilon: float,
    p: ModelParams,
    cfg: SpectralConfig,
    dt: float = 1e-3,
    tau_steps: int = 64,
    N: int | None = None,
    path: SteadyPath | None = None,
    save_every: int = 10,
    pole_rate: float = 6.0,
) -> TransferResult:
    """Steer ``start`` to ``end`` in time ``1/epsilon`` with the quasi-static feedback.

    With ``N`` given, the forcing is restricted to the first ``N`` psi modes
    (both the path forcing and the feedback) and recorded in psi
    coordinates so it can be replayed as an open-loop control.
    ``pole_rate`` sets the closed-loop poles near ``-pole_rate``.
    """
    if not pole_rate > 0:
        raise ValueError("pole_rate must be positive")
    if not 0 < epsilon <= 1:
        raise ValueError("epsilon must lie in (0, 1]")
    if path is None:
        path = build_steady_path(start, end, p, cfg, tau_steps)
    track = eigen_track(path, p, cfg)
    law = synthesize_feedback(track, cfg, N, poles=_poles(track.m, pole_rate))
    m = track.m
    basis = cfg.basis
    grid = TimeGrid.span(0.0, 1.0 / epsilon, dt)
    eps = 1.0 / grid.t1
    step = _Stepper(p, cfg, grid.dt)
    O = cfg.overlap[:, :N] if N is not None else None
    n_rec = N if N is not None else cfg.M
    record = np.zeros((grid.steps + 1, n_rec))

    w = np.array(start.field, dtype=float)
    zeta = np.zeros(m)
    saved = list(range(0, grid.steps + 1, save_every))
    if saved[-1] != grid.steps:
        saved.append(grid.steps)
    states = np.empty((len(saved), cfg.M))
    parts = np.empty((len(saved), 4))
    slot = 0
    max_dev = 0.0
    violation = None
    for n in range(grid.steps + 1):
        tau = eps * n * grid.dt
        ybar = path.y(tau)
        lam, E, B, K = law.gain(tau)
        z = w - ybar
        X = np.concatenate([E @ z, zeta])
        if N is not None:
            forcing_psi = path.h_psi_at(tau)[:N] + O.T @ (E.T @ zeta)
            record[n] = forcing_psi
            forcing = O @ forcing_psi
        else:
            forcing = path.h(tau) + law.input_matrix @ (E.T @ zeta)
            record[n] = forcing
        if slot < len(saved) and saved[slot] == n:
            states[slot] = w
            Acl = _closed_loop(lam, B, K)
            Q = solve_lyapunov(Acl)
            zg = basis.to_grid(z)
            dev = float(np.max(np.abs(zg)))
            max_dev = max(max_dev, dev)
            if violation is None and dev > 1.0:
                violation = n * grid.dt
            A = operator_matrix(ybar, p, cfg)
            parts[slot] = (X @ Q @ X, -0.5 * z @ A @ z, zeta @ zeta, float(np.sum(basis.k**2 * z**2)))
            slot += 1
        if n == grid.steps:
            break
        w = step(w, forcing)
        zeta = zeta + grid.dt * (K @ X)
        if (n + 1) % 64 == 0:
            _check(w, n + 1, grid)

    c, window = _calibrate(parts)
    vhat = c * parts[:, 0] + parts[:, 1]
    defect = float(basis.norm(w - end.field, order=1))
    traj = Trajectory(grid, states, saved=np.array(saved))
    control = ControlSignal(grid, record, basis="psi" if N is not None else "field")
    return TransferResult(
        trajectory=traj,
        defect=defect,
        control=control,
        times=grid.dt * np.array(saved),
        vhat=vhat,
        sandwich=window,
        c=c,
        max_deviation=max_dev,
        violation_time=violation,
        m=m,
        kalman_min=float(np.min(kalman_check(track, cfg, N))),
        lyapunov_residual=float(np.max(law.lyapunov_residuals)),
    )


def _calibrate(parts: np.ndarray) -> tuple[float, tuple]:
    """Smallest power-of-two weight making the Lyapunov functional coercive on the run."""
    quad, lin, zz, h1 = parts.T
    denom = zz + h1
    ok = denom > 1e-30
    c = 1.0
    for _ in range(60):
        ratio = (c * quad[ok] + lin[ok]) / denom[ok]
        if ratio.size == 0 or ratio.min() > 0:
            break
        c *= 2.0
    ratio = (c * quad[ok] + lin[ok]) / denom[ok]
    if ratio.size == 0:
        return c, (float("nan"), float("nan"))
    return c, (float(ratio.min()), float(ratio.max()))


def local_epsilon_steer(
    u0: np.ndarray,
    target: SteadyState,
    tol: float,
    p: ModelParams,
    cfg: SpectralConfig,
    noise: NoiseSpec,
    window: float = 0.5,
    N: int | None = None,
    beta: float = 1e-6,
    dt: float = 1e-3,
    max_windows: int = 5,
    delta: float = 0.5,
) -> tuple[ControlSignal, float]:
    """Steer a nearby state into the ``tol``-ball of ``target`` by repeated Gramian control.

    Each window linearizes at the target, computes the regularized control
    for the current error and applies it to the nonlinear equation.
    Returns the concatenated control and the final ``L2`` error.
    """
    from .dynamics import evolve_forced

    N = cfg.N_noise if N is None else N
    err0 = float(cfg.basis.norm(np.asarray(u0) - target.field, order=1))
    if err0 > delta:
        raise ValueError(f"initial H1 distance {err0:.3g} exceeds the local radius {delta}")
    g = 3.0 * cfg.basis.to_grid(target.field) ** 2 - p.lam
    w = np.array(u0, dtype=float)
    chunks = []
    err = float(np.linalg.norm(w - target.field))
    t0 = 0.0
    for _ in range(max_windows):
        if err <= tol:
            break
        grid = TimeGrid.span(t0, t0 + window, dt)
        pot = constant_potential(g, grid, cfg)
        signal, _ = regularized_control(w - target.field, pot, noise, N, beta, grid.t0, grid.t1, p, cfg)
        full = np.zeros((grid.steps + 1, cfg.N_noise))
        full[:, :N] = signal.samples
        applied = ControlSignal(grid, full)
        w = evolve_forced(w, applied, p, cfg, grid, noise=noise, save_every=grid.steps).final
        new_err = float(np.linalg.norm(w - target.field))
        chunks.append(full[:-1])
        t0 = grid.t1
        if new_err >= err:
            raise StructuralError(f"steering stopped contracting: {err:.3e} -> {new_err:.3e}")
        err = new_err
    if chunks:
        samples = np.vstack(chunks + [np.zeros((1, cfg.N_noise))])
        grid = TimeGrid(0.0, window / round(window / dt), samples.shape[0] - 1)
    else:
        grid = TimeGrid(0.0, dt, 0)
        samples = np.zeros((1, cfg.N_noise))
    return ControlSignal(grid, samples), err
