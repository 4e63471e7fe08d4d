# %% [markdown]
# # Gramian-regularized stabilization
#
# A perturbation of the linearized equation is driven to zero by a control
# acting on the first N noise modes of the window (a, b). More modes and a
# smaller penalty beta both give stronger contraction over the window.

# %%
import numpy as np

from acmix import ModelParams, NoiseSpec, SpectralConfig, TimeGrid, constant_potential, regularized_control

p = ModelParams(nu=1.0, lam=2.5)
cfg = SpectralConfig(M=32, N_noise=16)
noise = NoiseSpec.power_law(16)

# linearization at the zero state: g = -lam
pot = constant_potential(-p.lam, TimeGrid(0.0, 1e-3, 500), cfg)
z0 = np.zeros(cfg.M)
z0[0] = 1.0

# %% [markdown]
# ## Sweep over N and beta

# %%
betas = (1e-2, 1e-4, 1e-6)
print("N    " + "  ".join(f"beta={b:<8.0e}" for b in betas))
for N in (2, 4, 8, 16):
    row = []
    for beta in betas:
        _, rep = regularized_control(z0, pot, noise, N, beta, 0.0, 0.5, p, cfg)
        row.append(rep.decay_ratio)
    print(f"{N:<4} " + "  ".join(f"{r:<13.3e}" for r in row))
print(f"uncontrolled ratio: {rep.uncontrolled_ratio:.3f}")
