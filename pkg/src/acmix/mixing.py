"""Probabilistic experiments: irreducibility, rho decay, mixing and moments.

All ensembles draw their noise from ``path_rng(noise.seed, path)``, so every
estimate here is a deterministic function of the inputs.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import (
    ControlSignal,
    ModelParams,
    TimeGrid,
    evolve_ensemble,
    evolve_stochastic,
    evolve_unforced,
)
from .gramian import _solve_window
from .linearization import flow_J, potential_from_trajectory
from .quasistatic import quasistatic_transfer
from .spectral import NoiseSpec, SpectralConfig
from .steady import SteadyState, StructuralError, enumerate_steady_states

logger = logging.getLogger(__name__)

__all__ = [
    "ControlFamily",
    "build_control_family",
    "select_member",
    "irreducibility_trial",
    "RhoReport",
    "rho_stabilization",
    "MixingEstimate",
    "standard_observables",
    "estimate_mixing",
    "moment_observables",
    "MomentReport",
    "moment_certificates",
    "energy_moment_bound",
    "initial_influence",
]


# ---------------------------------------------------------------------------
# waiting-time control family


@dataclass
class ControlFamily:
    """Open-loop controls with waiting-time slots.

    ``legs`` maps the index ``k`` of a source equilibrium to the psi
    coefficients (first ``N`` modes) of its transfer control, sampled on the
    step ``dt``. Member ``(l, k)`` is the leg for ``k`` started at time
    ``offset + l * slot``; the leg of the target itself is empty.
    """

    legs: dict
    dt: float
    slot: float
    n_slots: int
    N: int
    target: SteadyState | None
    sources: list = field(default_factory=list)
    offset: float = 1.0

    @property
    def members(self) -> list[tuple[int, int]]:
        return [(l, k) for l in range(1, self.n_slots + 1) for k in sorted(self.legs)]

    @property
    def schedule(self) -> dict:
        return {m: self.offset + m[0] * self.slot for m in self.members}

    @property
    def T_star(self) -> float:
        longest = max((len(leg) - 1 for leg in self.legs.values()), default=0)
        return self.offset + self.n_slots * self.slot + longest * self.dt

    def __len__(self) -> int:
        return len(self.members)

    def start_step(self, l: int) -> int:
        return int(round((self.offset + l * self.slot) / self.dt))

    def sample(self, member: tuple[int, int], n: int) -> np.ndarray:
        """psi coefficients of ``member`` on step ``n`` (zero outside its support)."""
        l, k = member
        leg = self.legs[k]
        r = n - self.start_step(l)
        if 0 <= r < len(leg) - 1:
            return leg[r]
        return np.zeros(self.N)

    def signal(self, member: tuple[int, int], t_end: float | None = None) -> ControlSignal:
        """Materialize a member on ``[0, t_end]`` (default ``T*``)."""
        grid = TimeGrid.span(0.0, self.T_star if t_end is None else t_end, self.dt)
        samples = np.zeros((grid.steps + 1, self.N))
        l, k = member
        leg = self.legs[k]
        i0 = self.start_step(l)
        stop = min(i0 + len(leg) - 1, grid.steps + 1)
        if stop > i0:
            samples[i0:stop] = leg[: stop - i0]
        return ControlSignal(grid, samples)

    def drift(self, member: tuple[int, int], cfg: SpectralConfig):
        """Field-coefficient forcing ``n -> O_N psi`` for :func:`evolve_ensemble`."""
        lift = cfg.overlap[:, : self.N]
        l, k = member
        leg = self.legs[k]
        i0 = self.start_step(l)

        def at(n):
            r = n - i0
            if 0 <= r < len(leg) - 1:
                return lift @ leg[r]
            return None

        return at


def build_control_family(
    p: ModelParams,
    cfg: SpectralConfig,
    noise: NoiseSpec,
    target: SteadyState,
    epsilon: float = 0.1,
    N: int | None = None,
    slot: float = 1.0,
    n_slots: int = 30,
    dt: float = 1e-3,
    tau_steps: int = 64,
    pole_rate: float = 6.0,
) -> ControlFamily:
    """Waiting-time family steering every equilibrium to ``target``.

    Each leg is a quasi-static transfer whose forcing is restricted to the
    first ``N`` psi modes and recorded as an open-loop control. The replay
    is open loop, so legs are kept short (``epsilon`` large) and the
    feedback fast (``pole_rate``) to limit the growth of start errors while
    the path crosses unstable states.

    Raises
    ------
    StructuralError
        If a transfer leg fails.
    """
    N = cfg.N_noise if N is None else N
    if not 1 <= N <= min(cfg.N_noise, noise.N):
        raise ValueError(f"N={N} outside [1, {min(cfg.N_noise, noise.N)}]")
    if n_slots < 1 or not slot > 0:
        raise ValueError("need n_slots >= 1 and slot > 0")
    if p.lam <= p.nu:
        return ControlFamily({}, dt, slot, n_slots, N, target, [])
    states = enumerate_steady_states(p, cfg)
    legs = {}
    for st in states:
        if st.index_k == target.index_k:
            legs[st.index_k] = np.zeros((1, N))
            continue
        try:
            res = quasistatic_transfer(
                st, target, epsilon, p, cfg, dt=dt, tau_steps=tau_steps, N=N, pole_rate=pole_rate
            )
        except Exception as exc:
            raise StructuralError(f"transfer leg {st.index_k} -> {target.index_k} failed: {exc}") from exc
        legs[st.index_k] = res.control.samples
        logger.info("leg %d -> %d: defect %.3e", st.index_k, target.index_k, res.defect)
    return ControlFamily(legs, dt, slot, n_slots, N, target, states)


def select_member(
    u0: np.ndarray,
    family: ControlFamily,
    p: ModelParams,
    cfg: SpectralConfig,
    delta2: float = 1e-6,
) -> tuple[int, int] | None:
    """First waiting-time slot at which the free evolution is ``delta2``-close to an equilibrium."""
    if not family.legs:
        return None
    step = family.start_step(1) - family.start_step(0)
    grid = TimeGrid(0.0, family.dt, family.start_step(family.n_slots))
    traj = evolve_unforced(u0, p, cfg, grid, save_every=step)
    fields = {st.index_k: st.field for st in family.sources}
    for l in range(1, family.n_slots + 1):
        i = np.searchsorted(traj.saved, family.start_step(l))
        u = traj.states[min(i, len(traj.states) - 1)]
        for k, phi in fields.items():
            if np.linalg.norm(u - phi) <= delta2:
                return (l, k)
    return None


def irreducibility_trial(
    u0: np.ndarray,
    family: ControlFamily,
    noise_amplitude_scale: float,
    eps: float,
    p: ModelParams,
    cfg: SpectralConfig,
    noise: NoiseSpec,
    trials: int,
    relax: float = 10.0,
    delta2: float = 1e-6,
    target: np.ndarray | None = None,
) -> float:
    """Empirical frequency of ending ``eps``-close to the target.

    The member is chosen from the deterministic free evolution of ``u0``;
    the stochastic runs use it as drift over ``[0, T* + relax]``. Without a
    family (single equilibrium) the uncontrolled dynamics are run.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if target is None:
        if family.target is None:
            raise ValueError("no target state")
        target = family.target.field
    u0 = np.asarray(u0, dtype=float)
    member = select_member(u0, family, p, cfg, delta2) if family.legs else None
    if family.legs and member is None:
        logger.info("no equilibrium reached within %d slots", family.n_slots)
        return 0.0
    grid = TimeGrid.span(0.0, family.T_star + relax, family.dt)
    scaled = noise.scaled(noise_amplitude_scale)
    noisy = bool(np.any(scaled.b != 0))
    P = trials if noisy else 1
    drift = family.drift(member, cfg) if member is not None else None
    run = evolve_ensemble(u0, scaled, p, cfg, grid, paths=np.arange(P), drift=drift, save_every=0)
    dist = np.linalg.norm(run.states[-1] - target, axis=1)
    hits = float(np.mean(dist <= eps))
    return hits


# ---------------------------------------------------------------------------
# rho-process stabilization


@dataclass
class RhoReport:
    """Ensemble statistics of the controlled rho-process."""

    delta: float
    beta: float
    N: int
    decay_ratios: np.ndarray
    control_energy: float
    mean_sq: np.ndarray = None
    energy_by_step: np.ndarray = None
    ensemble: int = 0

    @property
    def geometric_mean(self) -> float:
        return float(np.exp(np.mean(np.log(self.decay_ratios))))

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, val in out.items():
            if isinstance(val, np.ndarray):
                out[key] = val.tolist()
        out["geometric_mean"] = self.geometric_mean
        return out


def rho_stabilization(
    u0: np.ndarray,
    xi: np.ndarray,
    noise: NoiseSpec,
    p: ModelParams,
    cfg: SpectralConfig,
    delta: float,
    beta: float,
    N: int,
    horizon_n: int,
    ensemble: int,
    dt: float = 1e-3,
) -> RhoReport:
    """Controlled rho-process along independent stochastic paths.

    On ``[n-1, n-delta]`` rho follows the linearized flow; on ``[n-delta, n]``
    the regularized control built from the path's truncated Malliavin matrix
    is applied. The stochastic integral of ``v = -zeta`` against the stored
    increments gives the control energy.
    """
    if not 0 < delta < 0.5:
        raise ValueError("delta must lie in (0, 1/2)")
    xi = np.asarray(xi, dtype=float)
    if abs(np.linalg.norm(xi) - 1.0) > 1e-9:
        raise ValueError("xi must have unit norm")
    if horizon_n < 1 or ensemble < 1:
        raise ValueError("need horizon_n >= 1 and ensemble >= 1")
    grid = TimeGrid.span(0.0, float(horizon_n), dt)
    sq = np.zeros((ensemble, horizon_n + 1))
    integral = np.zeros((ensemble, horizon_n + 1))
    for path in range(ensemble):
        traj = evolve_stochastic(u0, noise, p, cfg, grid, path=path)
        pot = potential_from_trajectory(traj, p, cfg)
        rho = xi.copy()
        sq[path, 0] = 1.0
        total = 0.0
        for n in range(1, horizon_n + 1):
            rho = flow_J(rho, pot, n - 1, n - delta, p, cfg)
            if N > 0:
                *_, samples, rho, (lin, inp, i, j) = _solve_window(rho, pot, noise, N, beta, n - delta, n, p, cfg)
                if traj.noise_path is not None:
                    # v = -zeta paired with the increment of the same step
                    total -= float(np.sum(samples[:-1] * traj.noise_path[i:j, :N]))
            else:
                rho = flow_J(rho, pot, n - delta, n, p, cfg)
            sq[path, n] = float(rho @ rho)
            integral[path, n] = total
    mean_sq = sq.mean(axis=0)
    ratios = mean_sq[1:] / mean_sq[:-1]
    energy = (integral**2).mean(axis=0)
    return RhoReport(
        delta=delta,
        beta=beta,
        N=N,
        decay_ratios=ratios,
        control_energy=float(energy[-1]),
        mean_sq=mean_sq,
        energy_by_step=energy,
        ensemble=ensemble,
    )


# ---------------------------------------------------------------------------
# mixing diagnostics


def standard_observables(gamma: float = 0.05) -> dict:
    """``<u, e_1>``, ``|u|^2`` and ``exp(-gamma |u|^2)`` on batches of coefficients."""
    return {
        "e1": lambda u: u[..., 0],
        "norm2": lambda u: np.sum(u * u, axis=-1),
        "expw": lambda u: np.exp(-gamma * np.sum(u * u, axis=-1)),
    }


@dataclass
class MixingEstimate:
    """Two-start decay fits and long-run means per observable."""

    observables: list
    rates: dict
    fit_quality: dict
    gamma: float
    ensemble_size: int
    times: np.ndarray = None
    delta: dict = None
    stderr: dict = None
    long_run: dict = None
    agreement: dict = None
    fit_window: dict = None

    def inconclusive(self, name: str) -> bool:
        return self.rates.get(name) is None

    def to_dict(self) -> dict:
        return {
            "observables": list(self.observables),
            "rates": self.rates,
            "fit_quality": self.fit_quality,
            "gamma": self.gamma,
            "ensemble_size": self.ensemble_size,
            "long_run": self.long_run,
            "agreement": self.agreement,
            "fit_window": self.fit_window,
        }


def _fit_decay(times, delta, se, min_points: int = 5):
    """Least-squares fit of ``log delta`` over the leading window above ``3 se``."""
    above = delta > 3.0 * se
    stop = int(np.argmin(above)) if not above.all() else above.size
    if stop < min_points:
        return None, float("nan"), (float(times[0]), float(times[max(stop - 1, 0)]))
    t = times[:stop]
    y = np.log(delta[:stop])
    slope, icpt = np.polyfit(t, y, 1)
    resid = y - (slope * t + icpt)
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else float("nan")
    return -float(slope), r2, (float(t[0]), float(t[-1]))


def estimate_mixing(
    u0_pair: tuple,
    noise: NoiseSpec,
    p: ModelParams,
    cfg: SpectralConfig,
    horizon: float,
    ensemble: int,
    observables: dict | None = None,
    gamma: float = 0.05,
    dt: float = 1e-3,
    sample_every: float = 0.1,
    shared_noise: bool = False,
    burn_in: float = 0.5,
    min_quality: float = 0.8,
) -> MixingEstimate:
    """Distance between observable means of two ensembles and its decay rate.

    Ensemble A uses paths ``0..P-1``; ensemble B uses ``P..2P-1`` unless
    ``shared_noise`` is set. Long-run means average each path over the last
    ``1 - burn_in`` fraction of the horizon; their standard errors are taken
    across paths.
    """
    if ensemble < 100:
        raise ValueError("ensemble must be at least 100")
    observables = standard_observables(gamma) if observables is None else observables
    grid = TimeGrid.span(0.0, horizon, dt)
    every = max(1, int(round(sample_every / grid.dt)))

    def observe(u):
        return {name: f(u) for name, f in observables.items()}

    runs = []
    for shift in (0, 0 if shared_noise else ensemble):
        idx = len(runs)
        run = evolve_ensemble(
            u0_pair[idx], noise, p, cfg, grid, paths=np.arange(shift, shift + ensemble), save_every=every, observe=observe
        )
        runs.append(run)
    times = runs[0].times
    late = times >= burn_in * horizon
    rates, quality, deltas, ses, long_run, agree, windows = {}, {}, {}, {}, {}, {}, {}
    for name in observables:
        a, b = runs[0].observed[name], runs[1].observed[name]
        d = np.abs(a.mean(axis=1) - b.mean(axis=1))
        se = np.sqrt(a.var(axis=1, ddof=1) / ensemble + b.var(axis=1, ddof=1) / ensemble)
        deltas[name], ses[name] = d, se
        rate, r2, window = _fit_decay(times, d, se)
        quality[name] = r2
        windows[name] = window
        rates[name] = rate if (rate is not None and r2 >= min_quality and rate > 0) else None
        ma, mb = a[late].mean(axis=0), b[late].mean(axis=0)
        mean_a, mean_b = float(ma.mean()), float(mb.mean())
        se_a, se_b = float(ma.std(ddof=1) / math.sqrt(ensemble)), float(mb.std(ddof=1) / math.sqrt(ensemble))
        combined = math.hypot(se_a, se_b)
        long_run[name] = {"mean_a": mean_a, "mean_b": mean_b, "se_a": se_a, "se_b": se_b}
        agree[name] = bool(abs(mean_a - mean_b) <= 3.0 * combined) if combined > 0 else mean_a == mean_b
    return MixingEstimate(
        observables=list(observables),
        rates=rates,
        fit_quality=quality,
        gamma=gamma,
        ensemble_size=ensemble,
        times=times,
        delta=deltas,
        stderr=ses,
        long_run=long_run,
        agreement=agree,
        fit_window=windows,
    )


# ---------------------------------------------------------------------------
# moment certificates


def moment_observables(cfg: SpectralConfig):
    """Observer recording ``|u|^2`` and the collocation sup of ``u^2``."""
    basis = cfg.basis

    def observe(u):
        return {"norm2": np.sum(u * u, axis=-1), "supsq": np.max(basis.to_grid(u) ** 2, axis=-1)}

    return observe


def energy_moment_bound(p: ModelParams, noise: NoiseSpec, cfg: SpectralConfig) -> float:
    """Level above which the mean energy ``E|u|^2`` must decrease.

    From Ito's formula, Poincare and Jensen:
    ``d/dt m <= 2 (lam - nu) m - 2 m^2 / pi + E0`` with ``E0`` the trace of the
    projected noise covariance, whose positive root is returned.
    """
    E0 = float(np.sum((cfg.overlap * noise.b) ** 2))
    c = p.lam - p.nu
    return 0.5 * math.pi * (c + math.sqrt(c * c + 2.0 * E0 / math.pi))


@dataclass
class MomentReport:
    gamma: float
    halvings: int
    C_energy: float
    C_exp: float
    sup_energy_mean: float
    window_sup_moments: np.ndarray
    times: np.ndarray
    energy_mean: np.ndarray
    exp_mean: np.ndarray

    def to_dict(self) -> dict:
        out = asdict(self)
        for key, val in out.items():
            if isinstance(val, np.ndarray):
                out[key] = val.tolist()
        return out


def _diverged(values: np.ndarray) -> bool:
    if not np.all(np.isfinite(values)):
        return True
    total = values.sum(axis=-1)
    # a single path carrying most of the mass signals a heavy tail
    return bool(np.any(values.max(axis=-1) > 0.5 * total)) and values.shape[-1] > 4


def moment_certificates(
    run,
    u0: np.ndarray,
    p: ModelParams,
    gamma: float = 0.05,
    max_halvings: int = 10,
) -> MomentReport:
    """Empirical constants for the energy and exponential moment bounds.

    ``run`` is an :class:`EnsembleRun` recorded with :func:`moment_observables`.
    ``C_energy`` is the smallest ``C`` with ``E|u_t|^2 <= C + e^{-nu t}|u0|^2``
    and ``C_exp`` the smallest with
    ``E exp(gamma |u_t|^2) <= C exp(gamma e^{-nu t} |u0|^2)`` on the samples.
    Sup-norm moments are taken over unit windows ``(n - 1/2, n)``.
    """
    norm2 = run.observed["norm2"]
    supsq = run.observed["supsq"]
    times = run.times
    r0 = float(np.sum(np.asarray(u0, dtype=float) ** 2))
    decay = np.exp(-p.nu * times)
    energy = norm2.mean(axis=1)
    C_energy = max(0.0, float(np.max(energy - decay * r0)))
    halvings = 0
    while True:
        with np.errstate(over="ignore"):
            ew = np.exp(gamma * norm2)
        windows = []
        for n in range(1, int(math.floor(times[-1] + 1e-9)) + 1):
            mask = (times > n - 0.5 - 1e-12) & (times <= n + 1e-12)
            if mask.any():
                with np.errstate(over="ignore"):
                    windows.append(np.exp(gamma * supsq[mask].max(axis=0)))
        win = np.array(windows) if windows else np.zeros((0, norm2.shape[1]))
        if (_diverged(ew) or (win.size and _diverged(win))) and halvings < max_halvings:
            logger.info("exponential moment diverged at gamma=%g; halving", gamma)
            gamma *= 0.5
            halvings += 1
            continue
        break
    exp_mean = ew.mean(axis=1)
    C_exp = float(np.max(exp_mean / np.exp(gamma * decay * r0)))
    return MomentReport(
        gamma=gamma,
        halvings=halvings,
        C_energy=C_energy,
        C_exp=C_exp,
        sup_energy_mean=float(energy.max()),
        window_sup_moments=win.mean(axis=1) if win.size else np.zeros(0),
        times=times,
        energy_mean=energy,
        exp_mean=exp_mean,
    )


def initial_influence(
    radii,
    times,
    noise: NoiseSpec,
    p: ModelParams,
    cfg: SpectralConfig,
    gamma: float = 0.05,
    ensemble: int = 200,
    dt: float = 1e-3,
) -> dict:
    """Slope of ``log E exp(gamma |u_t|^2)`` in ``gamma r^2`` for ``u0 = r e_1``.

    Returns ``{t: slope}``; the moment bound predicts slopes at most
    ``e^{-nu t}``.
    """
    radii = np.asarray(radii, dtype=float)
    times = np.asarray(times, dtype=float)
    if radii.size < 2:
        raise ValueError("need at least two radii")
    grid = TimeGrid.span(0.0, float(times.max()), dt)
    idx = np.array([grid.index(t) for t in times])
    logs = np.empty((times.size, radii.size))
    for c, r in enumerate(radii):
        u0 = np.zeros(cfg.M)
        u0[0] = r
        run = evolve_ensemble(u0, noise, p, cfg, grid, paths=np.arange(ensemble))
        norms = np.sum(run.states[idx] ** 2, axis=-1)
        logs[:, c] = np.log(np.mean(np.exp(gamma * norms), axis=1))
    x = gamma * radii**2
    return {float(t): float(np.polyfit(x, logs[i], 1)[0]) for i, t in enumerate(times)}
