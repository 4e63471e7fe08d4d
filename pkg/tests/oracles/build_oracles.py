"""Independent reference values, frozen to ``frozen.json``.

Nothing here imports :mod:`acmix`. Integrals use adaptive quadrature,
steady states use an high-order explicit ODE integrator with a bracketing root finder.
Run ``python tests/oracles/build_oracles.py`` to regenerate.
"""
import json
import math
from pathlib import Path

import numpy as np
from scipy import integrate, optimize

A, B = math.pi / 4, 3 * math.pi / 4


def e(k, x):
    return math.sqrt(2 / math.pi) * math.sin(k * x)


def psi(j, x, a=A, b=B):
    L = b - a
    return math.sqrt(2 / L) * math.sin(j * math.pi * (x - a) / L)


def overlap(M, N, a=A, b=B):
    out = np.zeros((M, N))
    for k in range(1, M + 1):
        for j in range(1, N + 1):
            out[k - 1, j - 1] = integrate.quad(
                lambda x: e(k, x) * psi(j, x, a, b), a, b, epsabs=1e-14, epsrel=1e-13, limit=200
            )[0]
    return out


def shoot(theta, lam, nu, rtol=1e-12):
    sol = integrate.solve_ivp(
        lambda x, y: [y[1], (y[0] ** 3 - lam * y[0]) / nu],
        (0, math.pi),
        [0.0, theta],
        method="DOP853",
        rtol=rtol,
        atol=1e-14,
    )
    return sol.y[0, -1]


def steady_slopes(lam, nu, n_scan=4000):
    # y(pi; theta) is odd in theta; theta = 0 is always a root
    top = lam / math.sqrt(2 * nu) * (1 - 1e-9)
    grid = np.linspace(1e-6, top, n_scan)
    vals = np.array([shoot(t, lam, nu, rtol=1e-7) for t in grid])
    roots = []
    for t0, t1, v0, v1 in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if v0 == 0.0:
            roots.append(float(t0))
        elif v0 * v1 < 0:
            roots.append(optimize.brentq(shoot, t0, t1, args=(lam, nu), xtol=1e-14, rtol=1e-14))
    return sorted(roots)


def main():
    out = {}
    out["overlap_M8_N4"] = overlap(8, 4).tolist()
    out["overlap_off_window"] = overlap(6, 3, 0.3, 1.9).tolist()
    for lam in (0.5, 2.5, 4.5):
        roots = steady_slopes(lam, 1.0, n_scan=200)
        out[f"steady_lam{lam}"] = {"positive_slopes": roots, "count": 1 + 2 * len(roots)}
    out["tanh_theta"] = 2.5 / math.sqrt(2.0)
    path = Path(__file__).with_name("frozen.json")
    path.write_text(json.dumps(out, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps({k: v for k, v in out.items() if k.startswith("steady")}, indent=1))


if __name__ == "__main__":
    main()
