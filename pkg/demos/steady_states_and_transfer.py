# %% [markdown]
# # Stationary states and quasi-static transfer
#
# The deterministic Allen-Cahn equation on (0, pi) with Dirichlet walls has
# one zero state and a pair of odd-symmetric states per unstable mode of
# zero. We list them, then steer zero to the positive one with localized
# feedback along a slow path of forced stationary states.

# %%
import numpy as np

from acmix import ModelParams, SpectralConfig, enumerate_steady_states, find_state, quasistatic_transfer

p = ModelParams(nu=1.0, lam=2.5)
cfg = SpectralConfig(M=32, N_noise=16)

# %% [markdown]
# ## Stationary states

# %%
states = enumerate_steady_states(p, cfg)
for st in states:
    print(f"k={st.index_k:+d}  theta={st.theta:+.6f}  stable={st.stable}  top eigenvalue={st.top_eigenvalue:+.4f}")

# %% [markdown]
# ## Transfer from zero to the positive state
#
# Slower motion along the path leaves a smaller terminal defect.

# %%
start, end = find_state(states, 0), find_state(states, 1)
eps = np.array([0.2, 0.1, 0.05])
defects = []
for e in eps:
    res = quasistatic_transfer(start, end, e, p, cfg)
    defects.append(res.defect)
    print(f"eps={e:<5}  H1 defect={res.defect:.3e}  max deviation={res.max_deviation:.3f}  m={res.m}")

slope = np.polyfit(np.log(eps), np.log(defects), 1)[0]
print(f"log-log slope of the defect: {slope:.2f}")
