# %% [markdown]
# # Classical opinion models as discrete DCR steps
#
# DeGroot averaging, Hegselmann-Krause bounded confidence and Friedkin-Johnsen
# stubbornness are each one step of a diffusion, convection or
# reaction-diffusion recurrence with uniform weights. This script checks the
# three identities numerically and then rolls each model forward on a BA graph.

# %%
import numpy as np

from opinn import classical
from opinn.graph import generate_ba_graph

g = generate_ba_graph(50, 3, seed=0)
rng = np.random.default_rng(0)
x0 = rng.uniform(-1, 1, g.n_nodes)
x = rng.uniform(-1, 1, g.n_nodes)
print(g.n_nodes, "nodes,", g.n_edges, "edges")

# %% [markdown]
# Diffusion with weights `1/(deg+1)` on every edge is DeGroot.

# %%
dif = classical.step_dcr_diffusion(g, x, classical.uniform_weights(g, offset=1))
print("diffusion vs DeGroot:", np.abs(dif - classical.step_degroot(g, x)).max())

# %% [markdown]
# Convection over all users, restricted to peers within `eps` and with
# uniform velocity, is the HK step.

# %%
eps = 0.3
con = classical.step_dcr_convection(x, eps)
print("convection vs HK:", np.abs(con - classical.step_hk(x, eps)).max())

# %% [markdown]
# Diffusion with weights `1/deg` plus the source reaction `delta * x0` is FJ
# with `alpha = delta` (both unclamped here).

# %%
delta = 0.2
rd = classical.step_dcr_reaction_diffusion(g, x, x0, delta, clamp=False)
print("reaction-diffusion vs FJ:", np.abs(rd - classical.step_fj(g, x, x0, delta, clamp=False)).max())

# %% [markdown]
# Rolling forward: DeGroot contracts to consensus and HK with a small
# threshold freezes into a few clusters. FJ settles at a spread-out fixed
# point. The voter model copies one random neighbour per step.

# %%
for cfg in (
    classical.ClassicalConfig("degroot"),
    classical.ClassicalConfig("hk", epsilon=0.1),
    classical.ClassicalConfig("fj", alpha=0.3),
    classical.ClassicalConfig("voter", seed=1),
):
    traj = classical.simulate(g, x0, cfg, 100)
    final = np.sort(traj[:, -1])
    gaps = int(np.sum(np.diff(final) > 0.05)) + 1
    print(f"{cfg.model:8s} std {traj[:, 0].std():.3f} -> {traj[:, -1].std():.3f}, groups {gaps}")
