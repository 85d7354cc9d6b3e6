# coding: utf-8

# # Where the overshoot comes from
#
# Take the true solution u, project it exactly in time, and plug the N
# coefficient fields U_true into the discrete system the solver minimises.
# If the truncated system held exactly, U_true would be a minimiser with
# J = 0. It does not hold: integrating by parts in time leaves the terms
# c (u - u^N)(T) Psi_m(T) and c (p - p^N) Psi_m(0), which truncation
# does not remove. The least-squares solver finds fields with a far smaller
# J than U_true. The Cauchy problem is ill posed, so this small model error
# grows into a visible change in p.

# %%

from dataclasses import replace

import numpy as np

from carleman_isp import experiments as ex
from carleman_isp.iteration import extract_source
from carleman_isp.qrm import nonlinear_rhs

cfg = replace(ex.DESK, test="test1", delta=0.0)
grid = cfg.inner_grid()
basis = ex.get_basis(cfg.N, cfg.T)
sol = ex.simulate(cfg)
solver = ex.get_solver(cfg)

U_true = sol.inner_coefficients()
F_true = nonlinear_rhs(U_true, basis, cfg.case().F, grid)
J_true = solver.objective(U_true, F_true)

rec = ex.reconstruct(cfg)
F_rec = nonlinear_rhs(rec.U, basis, cfg.case().F, grid)
print(f"J at the exact projection : {J_true:.3e}")
print(f"J at the reconstruction   : {solver.objective(rec.U, F_rec):.3e}")

# %% [markdown]
# ## The best this cut-off could do
#
# The series of the exact projection at t = 0 peaks a little above 8. The
# reconstruction peaks higher. The largest gap sits inside the square, near
# the inclusion edge, well away from the measured boundary.

# %%

p_N = extract_source(U_true, basis)
inside = rec.p_true > 0
print("max of p_N (exact projection) inside:", round(float(p_N[inside].max()), 3))
print("max of reconstruction inside        :", round(float(rec.p_comp[inside].max()), 3))
diff = np.abs(rec.p_comp - p_N)
i, j = np.unravel_index(np.argmax(diff), diff.shape)
print(f"largest gap {diff.max():.3f} at x = {grid.xs[i]:.2f}, y = {grid.xs[j]:.2f}")
