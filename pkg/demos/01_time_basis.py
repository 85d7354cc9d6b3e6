# coding: utf-8

# # The time basis
#
# Every time-dependent quantity is expanded in the functions
# Psi_n(t) = P_{n-1}(t - T/2) exp(t - T/2), orthonormal on [0, T].
# This notebook builds them and looks at the matrix S[m, n] = int Psi_n' Psi_m,
# which turns the time derivative into a matrix acting on the mode index.

# %%

import numpy as np

from carleman_isp.time_basis import build_basis, stiffness_matrix

T = 1.5
basis = build_basis(40, T)
S = stiffness_matrix(basis).S

# %% [markdown]
# ## Orthonormality
#
# The Gram matrix is computed with the same 256-point Gauss-Legendre rule the
# basis was built on. The defect is at round-off level even for N = 40,
# where naive Gram-Schmidt on monomials would have lost every digit.

# %%

print("max |Gram - I| =", np.abs(basis.gram() - np.eye(40)).max())

# %% [markdown]
# ## S is unit upper triangular
#
# Psi_n' is Psi_n plus a polynomial of lower degree times the same
# exponential, so its projection onto Psi_m vanishes for m > n and equals 1
# for m = n. Hence S is invertible and the projected system can be solved
# mode by mode.

# %%

print("max |diag(S) - 1| =", np.abs(np.diag(S) - 1).max())
print("max |strict lower part| =", np.abs(np.tril(S, -1)).max())
print("S[:5, :5] =")
print(np.array2string(S[:5, :5], precision=4, suppress_small=True))

# %% [markdown]
# ## Nesting
#
# The first n functions do not depend on how many are built. One projection
# onto 40 modes therefore serves every smaller cut-off.

# %%

small = build_basis(15, T)
t = np.linspace(0, T, 7)
print("max difference, first 15 modes:", np.abs(small.evaluate(t) - basis.evaluate(t)[:15]).max())
print("Psi_n(0) for n = 1..6:", np.round(basis.evaluate(0.0)[:6, 0], 4))
