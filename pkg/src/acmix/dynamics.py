"""Time integration of the deterministic and stochastic Allen-Cahn equation.

    du - nu u_xx dt + (u^3 - lam u) dt = h dt + dW,   u(0) = u(pi) = 0.

All steppers use the same IMEX Euler step: the diffusion is implicit and
diagonal in the sine basis, the reaction ``lam u - u^3`` and the forcing
are explicit and evaluated at the left endpoint. Brownian increments are
added after the implicit solve.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .spectral import NoiseSpec, SpectralConfig

logger = logging.getLogger(__name__)

__all__ = [
    "ModelParams",
    "TimeGrid",
    "ControlSignal",
    "Trajectory",
    "IntegrationError",
    "OVERFLOW_NORM",
    "step_deterministic",
    "evolve_unforced",
    "evolve_forced",
    "evolve_stochastic",
    "evolve_ensemble",
    "lyapunov_energy",
    "path_rng",
    "NOISE_BLOCK",
]

OVERFLOW_NORM = 1e6
# Brownian increments are drawn per path in blocks of this many steps, so the
# stream of a path does not depend on how many paths are simulated together.
NOISE_BLOCK = 256


class IntegrationError(RuntimeError):
    """Raised when a state leaves the finite range of the integrator."""

    def __init__(self, message: str, step: int | None = None, time: float | None = None):
        super().__init__(message)
        self.step = step
        self.time = time


@dataclass(frozen=True)
class ModelParams:
    """Diffusion ``nu`` and destabilizing coefficient ``lam``.

    ``cubic`` switches the nonlinearity off; it exists for linear test cases.
    """

    nu: float = 1.0
    lam: float = 2.5
    cubic: bool = True

    def __post_init__(self):
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0, t0 + dt, ..., t1`` with ``steps`` intervals."""

    t0: float
    dt: float
    steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")

    @classmethod
    def span(cls, t0: float, t1: float, dt: float) -> TimeGrid:
        """Grid covering ``[t0, t1]`` with the step rounded to fit exactly."""
        steps = max(1, int(round((t1 - t0) / dt)))
        return cls(t0, (t1 - t0) / steps, steps)

    @property
    def t1(self) -> float:
        return self.t0 + self.steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def index(self, t: float) -> int:
        """Node index of time ``t``; raises if ``t`` is not a grid node."""
        pos = (t - self.t0) / self.dt
        n = int(round(pos))
        if abs(pos - n) > 1e-6 or not 0 <= n <= self.steps:
            raise ValueError(f"time {t} is not a node of the grid [{self.t0}, {self.t1}]")
        return n


@dataclass
class ControlSignal:
    """Time-sampled control on a uniform grid.

    ``samples`` has shape ``(steps + 1, n)``. Row ``i`` acts on the step from
    node ``i`` to ``i + 1``; the last row is kept for completeness only.
    The coordinates are psi coefficients unless ``basis == "field"``.
    """

    grid: TimeGrid
    samples: np.ndarray
    basis: str = "psi"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.shape[0] != self.grid.steps + 1:
            raise ValueError("control needs one sample per grid node")

    def norm(self) -> float:
        """L2-in-time norm with the left-endpoint rule used by the stepper."""
        return math.sqrt(self.grid.dt * float(np.sum(self.samples[:-1] ** 2)))

    @classmethod
    def zeros(cls, grid: TimeGrid, n: int, basis: str = "psi") -> ControlSignal:
        return cls(grid, np.zeros((grid.steps + 1, n)), basis)


@dataclass
class Trajectory:
    """States on a time grid, optionally with forcing and noise records.

    ``states`` has shape ``(steps + 1, M)`` when every step is stored, or
    ``(len(saved), M)`` with ``saved`` listing the stored node indices.
    ``noise_path`` holds the Brownian increments, shape ``(steps, N)``.
    """

    grid: TimeGrid
    states: np.ndarray
    forcing_record: ControlSignal | None = None
    noise_path: np.ndarray | None = None
    saved: np.ndarray | None = None

    @property
    def times(self) -> np.ndarray:
        if self.saved is None:
            return self.grid.times
        return self.grid.t0 + self.grid.dt * self.saved

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def _rowwise(x: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """``x @ mat`` with results that do not depend on the batch size.

    BLAS picks a different kernel for a single row, so single rows are
    evaluated as a two-row batch; a path then gives bit-identical results
    alone or inside an ensemble.
    """
    if x.ndim == 2 and x.shape[0] > 1:
        return x @ mat
    rows = x.reshape(-1, x.shape[-1])
    out = np.vstack([rows, rows]) @ mat
    return out[:1].reshape(x.shape[:-1] + (mat.shape[-1],))


class _Stepper:
    """Precomputed pieces of the IMEX step for one configuration."""

    def __init__(self, p: ModelParams, cfg: SpectralConfig, dt: float):
        self.p, self.cfg, self.dt = p, cfg, dt
        self.basis = cfg.basis
        self.inv = 1.0 / (1.0 + dt * p.nu * self.basis.k**2)

    def cubic(self, u: np.ndarray) -> np.ndarray:
        grid = _rowwise(u, self.basis.synth.T)
        return _rowwise(grid**3, self.basis.analysis.T)

    def reaction(self, u: np.ndarray) -> np.ndarray:
        r = self.p.lam * u
        if self.p.cubic:
            r = r - self.cubic(u)
        return r

    def __call__(self, u: np.ndarray, forcing: np.ndarray | None = None) -> np.ndarray:
        rhs = u + self.dt * self.reaction(u)
        if forcing is not None:
            rhs = rhs + self.dt * forcing
        return self.inv * rhs


def _check(u: np.ndarray, step: int, grid: TimeGrid):
    norms = np.sqrt(np.sum(u * u, axis=-1))
    if not np.all(np.isfinite(norms)) or np.any(norms > OVERFLOW_NORM):
        raise IntegrationError(
            f"state norm exceeded {OVERFLOW_NORM:g} at step {step}",
            step=step,
            time=grid.t0 + step * grid.dt,
        )


def step_deterministic(
    u: np.ndarray, forcing: np.ndarray | None, p: ModelParams, cfg: SpectralConfig, dt: float
) -> np.ndarray:
    """One IMEX Euler step with an explicit field-valued forcing.

    Parameters
    ----------
    u : ndarray
        Coefficients, shape ``(..., M)``.
    forcing : ndarray or None
        Forcing in field coordinates (already mapped through the input
        operator), or None for the unforced equation.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    out = _Stepper(p, cfg, dt)(np.asarray(u, dtype=float), forcing)
    _check(out, 1, TimeGrid(0.0, dt, 1))
    return out


def _input_map(signal: ControlSignal, cfg: SpectralConfig, noise: NoiseSpec | None):
    """Callable giving the field-valued forcing of a control signal on step ``n``."""
    samples = signal.samples
    if signal.basis == "field":
        return lambda n: samples[n]
    n_modes = samples.shape[1]
    lift = cfg.overlap[:, :n_modes]
    if noise is None:
        return lambda n: lift @ samples[n]
    weights = noise.b[:n_modes]
    return lambda n: lift @ (weights * samples[n])


def evolve_unforced(
    u0: np.ndarray, p: ModelParams, cfg: SpectralConfig, grid: TimeGrid, save_every: int = 1
) -> Trajectory:
    """Integrate the unforced equation over ``grid``."""
    return evolve_forced(u0, None, p, cfg, grid, save_every=save_every)


def evolve_forced(
    u0: np.ndarray,
    zeta: ControlSignal | None,
    p: ModelParams,
    cfg: SpectralConfig,
    grid: TimeGrid | None = None,
    noise: NoiseSpec | None = None,
    save_every: int = 1,
) -> Trajectory:
    """Integrate under a piecewise-constant control.

    Psi-coordinate controls act through ``v -> sum_j w_j v_j psi_j`` with
    ``w = noise.b`` when ``noise`` is given (the operator B) and ``w = 1``
    otherwise (plain localized forcing).
    """
    if grid is None:
        if zeta is None:
            raise ValueError("a grid is needed without a control signal")
        grid = zeta.grid
    elif zeta is not None and (zeta.grid.steps != grid.steps or abs(zeta.grid.dt - grid.dt) > 1e-15):
        raise ValueError("control grid does not match the integration grid")
    forcing = None if zeta is None else _input_map(zeta, cfg, noise)
    step = _Stepper(p, cfg, grid.dt)
    u = np.array(u0, dtype=float)
    saved = np.arange(0, grid.steps + 1, save_every)
    if saved[-1] != grid.steps:
        saved = np.append(saved, grid.steps)
    states = np.empty((saved.size, cfg.M))
    states[0] = u
    slot = 1
    for n in range(grid.steps):
        u = step(u, None if forcing is None else forcing(n))
        if (n + 1) % 64 == 0 or n + 1 == grid.steps:
            _check(u, n + 1, grid)
        if slot < saved.size and saved[slot] == n + 1:
            states[slot] = u
            slot += 1
    return Trajectory(grid, states, forcing_record=zeta, saved=None if save_every == 1 else saved)


def path_rng(seed: int, path: int) -> np.random.Generator:
    """Independent generator for path ``path`` under root ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([seed, path]))


def _increments(rngs, block: int, N: int, sqdt: float) -> np.ndarray:
    """Block of Brownian increments, shape ``(block, paths, N)``."""
    return sqdt * np.stack([r.standard_normal((block, N)) for r in rngs], axis=1)


def evolve_stochastic(
    u0: np.ndarray,
    noise: NoiseSpec,
    p: ModelParams,
    cfg: SpectralConfig,
    grid: TimeGrid,
    path: int = 0,
    drift: ControlSignal | None = None,
    save_every: int = 1,
    store_noise: bool = True,
) -> Trajectory:
    """IMEX Euler-Maruyama path driven by the localized noise.

    The increments of path ``path`` come from ``path_rng(noise.seed, path)``,
    so a single path replays the corresponding member of an ensemble.
    """
    ens = evolve_ensemble(
        np.asarray(u0, dtype=float)[None, :],
        noise,
        p,
        cfg,
        grid,
        paths=np.array([path]),
        drift=None if drift is None else [drift],
        save_every=save_every,
        store_noise=store_noise,
    )
    return Trajectory(
        grid,
        ens.states[:, 0],
        forcing_record=drift,
        noise_path=None if ens.noise_path is None else ens.noise_path[:, 0],
        saved=ens.saved,
    )


@dataclass
class EnsembleRun:
    """Stored states of a batch of paths, shape ``(saved, paths, M)``."""

    grid: TimeGrid
    states: np.ndarray
    saved: np.ndarray | None
    noise_path: np.ndarray | None = None
    observed: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        if self.saved is None:
            return self.grid.times
        return self.grid.t0 + self.grid.dt * self.saved


def _drift_callable(drift, P: int, cfg: SpectralConfig):
    if drift is None or callable(drift):
        return drift
    drift = list(drift)
    if len(drift) != P:
        raise ValueError("need one drift entry per path")
    if all(d is None for d in drift):
        return None
    maps = [None if d is None else _input_map(d, cfg, None) for d in drift]

    def at(n):
        out = np.zeros((P, cfg.M))
        for i, f in enumerate(maps):
            if f is not None:
                out[i] = f(n)
        return out

    return at


def evolve_ensemble(
    u0: np.ndarray,
    noise: NoiseSpec,
    p: ModelParams,
    cfg: SpectralConfig,
    grid: TimeGrid,
    paths=None,
    drift=None,
    save_every: int = 1,
    store_noise: bool = False,
    observe=None,
) -> EnsembleRun:
    """Integrate a batch of independent paths at once.

    Parameters
    ----------
    u0 : ndarray
        Initial states, shape ``(P, M)`` or ``(M,)`` for a common start.
    paths : array of int, optional
        Path indices used to derive RNG streams; defaults to ``0..P-1``.
    drift : callable or sequence, optional
        Deterministic forcing: either ``drift(n)`` returning field
        coefficients for step ``n`` (shape ``(M,)`` or ``(P, M)``, or None),
        or one ``ControlSignal`` (or None) per path.
    save_every : int
        Store every ``save_every``-th node (the final node is always kept).
        ``0`` stores only the initial and final states.
    observe : callable, optional
        ``observe(u) -> dict of arrays`` evaluated on stored nodes only;
        when given, states are not kept beyond the final one.
    """
    u = np.array(u0, dtype=float)
    if paths is None:
        P = u.shape[0] if u.ndim == 2 else 1
        paths = np.arange(P)
    paths = np.asarray(paths)
    P = paths.size
    if u.ndim == 1:
        u = np.broadcast_to(u, (P, cfg.M)).copy()
    if noise.N != cfg.N_noise:
        raise ValueError(f"noise has {noise.N} amplitudes but N_noise={cfg.N_noise}")

    step = _Stepper(p, cfg, grid.dt)
    noisy = bool(np.any(noise.b != 0))
    lift = (noise.b[:, None] * cfg.overlap.T) if noisy else None
    rngs = [path_rng(noise.seed, int(i)) for i in paths] if noisy else []
    sqdt = math.sqrt(grid.dt)

    drift_at = _drift_callable(drift, P, cfg)

    if save_every <= 0:
        saved = np.array([0, grid.steps]) if grid.steps else np.array([0])
    else:
        saved = np.arange(0, grid.steps + 1, save_every)
        if saved[-1] != grid.steps:
            saved = np.append(saved, grid.steps)
    keep_states = observe is None
    states = np.empty((saved.size, P, cfg.M)) if keep_states else None
    observed: dict = {}

    def record(slot, u):
        if keep_states:
            states[slot] = u
        else:
            for key, val in observe(u).items():
                observed.setdefault(key, np.empty((saved.size,) + np.shape(val)))[slot] = val

    record(0, u)
    # without noise no draws are made; the stored increments are then zeros
    noise_path = (np.empty if noisy else np.zeros)((grid.steps, P, noise.N)) if store_noise else None
    block = None
    slot = 1
    for n in range(grid.steps):
        force = None if drift_at is None else drift_at(n)
        u = step(u, force)
        if noisy:
            b_idx = n % NOISE_BLOCK
            if b_idx == 0:
                block = _increments(rngs, NOISE_BLOCK, noise.N, sqdt)
            dW = block[b_idx]
            u = u + _rowwise(dW, lift)
            if noise_path is not None:
                noise_path[n] = dW
        if (n + 1) % 64 == 0 or n + 1 == grid.steps:
            _check(u, n + 1, grid)
        if slot < saved.size and saved[slot] == n + 1:
            record(slot, u)
            slot += 1
    if not keep_states:
        states = u[None]
    return EnsembleRun(
        grid,
        states,
        None if save_every == 1 else saved,
        noise_path=noise_path,
        observed=observed,
    )


def lyapunov_energy(u: np.ndarray, p: ModelParams, cfg: SpectralConfig) -> np.ndarray:
    """Gradient-flow energy ``int nu/2 u_x^2 - lam/2 u^2 + u^4/4 dx``.

    The quartic term uses the collocation trapezoid rule, exact for
    ``M``-mode fields when ``quad_points >= 2M``.
    """
    basis = cfg.basis
    u = np.asarray(u, dtype=float)
    grad = 0.5 * p.nu * np.sum(basis.k**2 * u**2, axis=-1)
    mass = 0.5 * p.lam * np.sum(u**2, axis=-1)
    quartic = 0.25 * basis.integrate(basis.to_grid(u) ** 4)
    return grad - mass + quartic
