# coding: utf-8

# # Synthetic measurements
#
# The data are generated by solving the forward problem on a larger square
# with an explicit finite-difference scheme and reading u and its outward
# normal derivative on the boundary of the unit square. We use the desk
# preset (40 x 40 inner grid, N = 25) so this runs in a few seconds.

# %%

from dataclasses import replace

import numpy as np

from carleman_isp import experiments as ex

cfg = replace(ex.DESK, test="test1")
sol = ex.simulate(cfg)
print(f"outer grid {sol.outer.Nx} x {sol.outer.Nx}, h = {sol.outer.h:.4f}, "
      f"{sol.n_steps} steps of dt = {sol.dt:.2e}")

# %% [markdown]
# ## Projected Cauchy data
#
# While marching, the window around the unit square is projected onto the
# basis with Simpson's rule over every time step. The source is
# discontinuous, so u changes fast right after t = 0. Projecting only the
# stored 128 snapshots would miss that transient.

# %%

basis = ex.get_basis(cfg.N, cfg.T)
clean = ex.boundary_data(replace(cfg, delta=0.0), sol, basis)
noisy = ex.boundary_data(cfg, sol, basis, seed=0)
print("G shape (boundary nodes, modes):", clean.G.shape)
print("largest |G_m| per mode, first 6:", np.round(np.abs(clean.G).max(axis=0)[:6], 4))
print("relative perturbation of G:", np.abs(noisy.G / np.where(clean.G == 0, 1, clean.G) - 1).max())

# %% [markdown]
# ## How many modes?
#
# The truncated series at t = 0 is what the reconstruction returns, so the
# error e_N = |p - sum_{n<=N} u_n Psi_n(0)| bounds what any N can achieve.
# It decreases with N, slowly, because p jumps across the inclusion edge.

# %%

table = ex.choose_cutoff(cfg, (10, 15, 20, 25, 30))
for N, (err, field) in sorted(table.items()):
    print(f"N = {N:2d}: sup e_N = {err:.3f}")
