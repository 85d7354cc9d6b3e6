"""Orthonormal exponential-polynomial basis of L^2(0, T).

The basis functions are

    Psi_n(t) = P_{n-1}(t - T/2) * exp(t - T/2),     n = 1, ..., N,

where the P_k are the orthonormal polynomials for the weight exp(2s) on
[-T/2, T/2]. This is exactly what Gram-Schmidt produces from
phi_n(t) = (t - T/2)^(n-1) exp(t - T/2) with positive normalisation: the
nested spans coincide, and the leading coefficients are positive.

The polynomials are generated by a Stieltjes procedure (Gram-Schmidt on
the Krylov sequence s * P_k, with full reorthogonalisation) over a
Gauss-Legendre discretisation of the weight. Orthogonalising the raw
monomials instead loses all accuracy well before N = 40 in double
precision, while the three-term recurrence keeps evaluation and exact
differentiation stable for any practical N.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import BasisConditioningError

# Tolerance used to decide whether the discrete Gram matrix is the identity.
ORTHONORMALITY_TOL = 1e-10


@dataclass(frozen=True)
class TimeBasis:
    """Orthonormal basis {Psi_1, ..., Psi_N} on [0, T].

    Attributes
    ----------
    T : float
        Final time.
    N : int
        Number of retained modes.
    alpha, beta : ndarray
        Three-term recurrence coefficients,
        ``beta[k+1] P_{k+1} = (s - alpha[k]) P_k - beta[k] P_{k-1}``.
        ``beta[0]`` holds the constant ``P_0``.
    quad_nodes, quad_weights : ndarray
        Gauss-Legendre rule on [0, T].
    """

    T: float
    N: int
    alpha: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)
    quad_nodes: np.ndarray = field(repr=False)
    quad_weights: np.ndarray = field(repr=False)

    @property
    def n_quad(self) -> int:
        return self.quad_nodes.size

    def _check_t(self, t):
        t = np.asarray(t, dtype=float)
        slack = 1e-12 * max(self.T, 1.0)
        if np.any(~np.isfinite(t)) or np.any(t < -slack) or np.any(t > self.T + slack):
            raise ValueError(f"time outside [0, {self.T}]")
        return t

    def _recurrence(self, t, derivative):
        s = np.atleast_1d(self._check_t(t)).ravel() - 0.5 * self.T
        p = np.empty((self.N, s.size))
        dp = np.zeros((self.N, s.size)) if derivative else None
        p[0] = self.beta[0]
        for k in range(self.N - 1):
            prev = p[k - 1] if k > 0 else 0.0
            p[k + 1] = ((s - self.alpha[k]) * p[k] - self.beta[k] * prev) / self.beta[k + 1]
            if derivative:
                dprev = dp[k - 1] if k > 0 else 0.0
                dp[k + 1] = (p[k] + (s - self.alpha[k]) * dp[k]
                             - self.beta[k] * dprev) / self.beta[k + 1]
        return s, p, dp

    def evaluate(self, t) -> np.ndarray:
        """All basis functions at times ``t``; shape ``(N, len(t))``."""
        s, p, _ = self._recurrence(t, derivative=False)
        return p * np.exp(s)

    def derivative(self, t) -> np.ndarray:
        """Exact time derivatives Psi_n'(t); shape ``(N, len(t))``.

        Uses (P e^s)' = (P' + P) e^s with P' from the differentiated
        recurrence, so no numerical differentiation is involved.
        """
        s, p, dp = self._recurrence(t, derivative=True)
        return (dp + p) * np.exp(s)

    def _mode(self, n):
        if not (1 <= int(n) <= self.N) or int(n) != n:
            raise IndexError(f"mode index {n} outside 1..{self.N}")
        return int(n) - 1

    def eval_basis(self, n: int, t: float) -> float:
        """Psi_n(t) for a single 1-based mode index."""
        k = self._mode(n)
        return float(self.evaluate(t)[k, 0])

    def eval_basis_derivative(self, n: int, t: float) -> float:
        k = self._mode(n)
        return float(self.derivative(t)[k, 0])

    def at_zero(self) -> np.ndarray:
        """Psi_n(0) for n = 1..N."""
        return self.evaluate(0.0)[:, 0]

    def integrate(self, values) -> np.ndarray:
        """Quadrature over [0, T] along the last axis of samples at ``quad_nodes``."""
        return np.asarray(values) @ self.quad_weights

    def gram(self) -> np.ndarray:
        """Discrete Gram matrix <Psi_i, Psi_j>."""
        psi = self.evaluate(self.quad_nodes)
        return (psi * self.quad_weights) @ psi.T

    @property
    def coeffs(self) -> np.ndarray:
        """Lower-triangular C with Psi_m = sum_n C[m, n] phi_n.

        Obtained by expanding the recurrence in monomials. The entries grow
        very quickly with N; the matrix is informative but evaluating the
        basis through it is ill-conditioned, which is why evaluation uses the
        recurrence.
        """
        C = np.zeros((self.N, self.N))
        C[0, 0] = self.beta[0]
        for k in range(self.N - 1):
            row = np.zeros(self.N)
            row[1:k + 2] += C[k, :k + 1]          # s * P_k
            row[:k + 1] -= self.alpha[k] * C[k, :k + 1]
            if k > 0:
                row[:k] -= self.beta[k] * C[k - 1, :k]
            C[k + 1] = row / self.beta[k + 1]
        return C


@dataclass(frozen=True)
class StiffnessMatrix:
    """``S[m, n] = int_0^T Psi_n'(t) Psi_m(t) dt`` (0-based) plus Psi_n(0)."""

    S: np.ndarray
    psi0: np.ndarray


def gauss_legendre(n_quad: int, T: float):
    x, w = leggauss(n_quad)
    return 0.5 * T * (x + 1.0), 0.5 * T * w


def build_basis(N: int, T: float, n_quad: int = 256) -> TimeBasis:
    """Construct the basis for ``N`` modes on [0, T].

    Raises
    ------
    ValueError
        For non-finite or non-positive ``T``, or invalid ``N`` / ``n_quad``.
    BasisConditioningError
        If the discrete inner product cannot support ``N`` orthonormal
        functions (``n_quad`` too small, or the weight over/underflows).
    """
    if isinstance(N, bool) or int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    if not np.isfinite(T) or T <= 0:
        raise ValueError(f"T must be positive and finite, got {T!r}")
    if int(n_quad) != n_quad or n_quad < 1:
        raise ValueError(f"n_quad must be a positive integer, got {n_quad!r}")
    N, n_quad, T = int(N), int(n_quad), float(T)
    if n_quad <= N:
        raise BasisConditioningError(
            f"n_quad={n_quad} nodes cannot carry {N} orthonormal functions")

    t, w = gauss_legendre(n_quad, T)
    s = t - 0.5 * T
    with np.errstate(over="raise", under="ignore"):
        try:
            mw = w * np.exp(2.0 * s)
        except FloatingPointError as exc:
            raise BasisConditioningError(f"weight exp(2s) overflows for T={T}") from exc

    P = np.empty((N, n_quad))
    alpha = np.zeros(N)
    beta = np.zeros(N)
    beta[0] = 1.0 / np.sqrt(mw.sum())
    P[0] = beta[0]
    for k in range(N - 1):
        alpha[k] = mw @ (s * P[k] ** 2)
        v = s * P[k]
        # two passes of Gram-Schmidt against everything so far
        for _ in range(2):
            v -= P[:k + 1].T @ (P[:k + 1] @ (mw * v))
        nrm = np.sqrt(mw @ v ** 2)
        if not np.isfinite(nrm) or nrm <= 1e-14 * np.sqrt(mw @ (s * P[k]) ** 2):
            raise BasisConditioningError(
                f"Gram matrix numerically singular at mode {k + 2} "
                f"(n_quad={n_quad}, N={N})")
        beta[k + 1] = nrm
        P[k + 1] = v / nrm
    alpha[N - 1] = mw @ (s * P[N - 1] ** 2)

    basis = TimeBasis(T=T, N=N, alpha=alpha, beta=beta, quad_nodes=t, quad_weights=w)
    defect = np.abs(basis.gram() - np.eye(N)).max()
    if not defect < ORTHONORMALITY_TOL:
        raise BasisConditioningError(
            f"orthonormality defect {defect:.3e} exceeds {ORTHONORMALITY_TOL:g}")
    return basis


def stiffness_matrix(basis: TimeBasis) -> StiffnessMatrix:
    psi = basis.evaluate(basis.quad_nodes)
    dpsi = basis.derivative(basis.quad_nodes)
    S = (psi * basis.quad_weights) @ dpsi.T
    return StiffnessMatrix(S=S, psi0=basis.at_zero())


def write_basis_csv(basis: TimeBasis, path, n_samples: int = 201) -> None:
    """Sample Psi_1..Psi_N on a uniform grid; columns ``t, psi_1, ..., psi_N``."""
    t = np.linspace(0.0, basis.T, n_samples)
    values = basis.evaluate(t)
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["t"] + [f"psi_{n}" for n in range(1, basis.N + 1)])
        for j, tj in enumerate(t):
            out.writerow([repr(float(tj))] + [repr(float(v)) for v in values[:, j]])


def write_stiffness_csv(stiff: StiffnessMatrix, path) -> None:
    """One row per m; header ``m, s_m1, ..., s_mN``."""
    N = stiff.S.shape[0]
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["m"] + [f"s_m{n}" for n in range(1, N + 1)])
        for m in range(N):
            out.writerow([m + 1] + [repr(float(v)) for v in stiff.S[m]])
