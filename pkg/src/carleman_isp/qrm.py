"""Carleman-weighted quasi-reversibility solve of the linearised elliptic system.

For a fixed right-hand side ``F`` (the projected nonlinearity at the
previous iterate) we minimise

    J(V) = sum_interior  W_hat(x) |Lap_h V - c(x) S V + F|^2 h^2   (+ eps h^2 |V|^2)

over grid functions V = (v_1, ..., v_N) with V = G on the boundary and
discrete normal derivative Q. The Cauchy data are imposed by elimination:
the boundary ring is set to G, the first interior layer follows from the
normal-derivative relation, and the inner nodes are the unknowns of a
linear least-squares problem ``min |A x - b|``.

``A`` depends only on the grid, S, c and the weight, so one
:class:`QRMSolver` serves every outer iteration, noise realisation and
source term on the same setup.

Two solution routes are provided:

``direct``
    sparse LU of the normal equations; exact, but the fill grows quickly
    with N and the grid, so it is meant for small problems.
``cg``
    conjugate gradients on the normal equations with a two-level
    preconditioner in the sine-transform basis of the inner grid. The
    lowest ``kc x kc`` spatial frequencies (coupled across all time modes)
    get the exact Galerkin block of the weighted normal matrix; every higher
    frequency gets the N x N block of the constant-coefficient operator
    ``mu - c_mean S``. The low block matters: ``mu - c S`` is numerically
    singular for smooth spatial modes, and only the Cauchy rows at the
    boundary keep the least-squares problem well posed there.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.fft import dstn

from .errors import SolverError
from .forward import Nonlinearity
from .grid import Grid2D, gradient, write_field_csv
from .projection import BoundaryData
from .time_basis import TimeBasis, gauss_legendre

log = logging.getLogger(__name__)

DIRECT_MAX_UNKNOWNS = 20_000
CG_RTOL = 1e-12
CG_MAXITER = 2000
# time nodes for projecting F; |.| kinks in t limit Gauss-Legendre to
# algebraic convergence, and 2048 nodes keep that error near 3e-7
RHS_TIME_NODES = 2048
# cap on N * kc^2, the size of the dense coarse block
COARSE_BUDGET = 9_000

# inward (di, dj) steps for the faces x-, x+, y-, y+
_INWARD = ((1, 0), (-1, 0), (0, 1), (0, -1))


class _Elimination:
    """Affine map from inner unknowns to full-grid fields (same for every mode).

    ``full = E @ inner + offset(data)``: the ring carries G and the first
    interior layer is fixed by the normal-derivative relation. A layer node
    touching two faces (a corner of the layer) averages both relations; the
    four corners of the boundary carry Dirichlet data only.

    The second-order relation ``V_1 = (3 G - 2 h Q + V_2) / 4`` needs the
    node two steps inward to be an unknown; next to the corners that node
    is itself on the layer, and the first-order relation is used there.
    """

    def __init__(self, grid: Grid2D, order: int):
        if order not in (1, 2):
            raise ValueError("neumann_order must be 1 or 2")
        n = grid.Nx
        self.grid, self.order = grid, order
        idx = np.arange(n * n).reshape(n, n)
        self.inner_nodes = idx[2:-2, 2:-2].ravel()
        col_of = -np.ones(n * n, int)
        col_of[self.inner_nodes] = np.arange(self.inner_nodes.size)

        # layer node -> [(boundary position b, dependent inner column or -1)]
        links = {}
        bi, bj = grid.boundary_ij.T
        for b in range(bi.size):
            di, dj = _INWARD[grid.boundary_face[b]]
            li, lj = bi[b] + di, bj[b] + dj
            if not (1 <= li <= n - 2 and 1 <= lj <= n - 2):
                continue
            dep = col_of[idx[li + di, lj + dj]] if order == 2 else -1
            links.setdefault(idx[li, lj], []).append((b, dep))

        rows, cols, vals = [self.inner_nodes], [np.arange(self.inner_nodes.size)], [np.ones(self.inner_nodes.size)]
        lay, bnd, wts, second = [], [], [], []
        for layer, items in links.items():
            w = 1.0 / len(items)
            for b, dep in items:
                lay.append(layer)
                bnd.append(b)
                wts.append(w)
                second.append(dep >= 0)
                if dep >= 0:
                    rows.append([layer])
                    cols.append([dep])
                    vals.append([0.25 * w])
        self.E = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n * n, self.inner_nodes.size))
        self._lay, self._bnd, self._w = np.array(lay), np.array(bnd), np.array(wts)
        self._second = np.array(second, bool)
        self.layer_nodes = np.array(sorted(links), int)

    def offset(self, data: BoundaryData) -> np.ndarray:
        grid, h = self.grid, self.grid.h
        off = np.zeros((data.N, grid.size))
        off[:, grid.boundary_idx] = data.G.T
        G, Q = data.G[self._bnd].T, data.Q[self._bnd].T
        const = np.where(self._second, (3.0 * G - 2.0 * h * Q) / 4.0, G - h * Q)
        np.add.at(off, (slice(None), self._lay), self._w * const)
        return off

    def lift(self, x: np.ndarray, data: BoundaryData) -> np.ndarray:
        return (self.E @ x.T).T + self.offset(data)


def _laplacian_matrix(n: int, h: float) -> sp.csr_matrix:
    """Five-point Laplacian, rows = interior nodes, columns = all n*n nodes."""
    idx = np.arange(n * n).reshape(n, n)
    rows = np.arange((n - 2) ** 2)
    cols = [idx[1:-1, 1:-1], idx[2:, 1:-1], idx[:-2, 1:-1], idx[1:-1, 2:], idx[1:-1, :-2]]
    vals = np.repeat([-4.0, 1.0, 1.0, 1.0, 1.0], rows.size)
    A = sp.csr_matrix((vals, (np.tile(rows, 5), np.concatenate([c.ravel() for c in cols]))),
                      shape=(rows.size, n * n))
    return A / (h * h)


def _sine_basis(m: int, k: int) -> np.ndarray:
    """First ``k`` orthonormal DST-I vectors of length ``m``, as columns."""
    i = np.arange(1, m + 1)
    return np.sqrt(2.0 / (m + 1)) * np.sin(np.pi * np.outer(i, np.arange(1, k + 1)) / (m + 1))


class _TwoLevelPreconditioner:
    def __init__(self, A1, A2, S, m, h, c_mean, w_mean, shift, kc):
        N = S.shape[0]
        self.N, self.m, self.kc = N, m, kc
        B = _sine_basis(m, kc)
        Phi = np.einsum("ia,jb->ijab", B, B).reshape(m * m, kc * kc)
        P1, P2 = A1 @ Phi, A2 @ Phi
        K11, K12, K22 = P1.T @ P1, P1.T @ P2, P2.T @ P2
        StS = S.T @ S
        nc = kc * kc
        Mc = np.empty((N * nc, N * nc))
        for i in range(N):
            for j in range(N):
                blk = StS[i, j] * K22 - S[j, i] * K12.T - S[i, j] * K12
                if i == j:
                    blk = blk + K11 + shift * np.eye(nc)
                Mc[i * nc:(i + 1) * nc, j * nc:(j + 1) * nc] = blk
        try:
            self.coarse = sla.cho_factor(Mc, overwrite_a=True)
        except sla.LinAlgError as exc:
            raise SolverError(f"coarse block is not positive definite: {exc}") from exc

        s2 = np.sin(np.pi * np.arange(1, m + 1) / (2.0 * (m + 1))) ** 2
        mu = -(4.0 / h**2) * (s2[:, None] + s2[None, :])
        self.high = np.ones((m, m), bool)
        self.high[:kc, :kc] = False
        blocks = mu[self.high][:, None, None] * np.eye(N) - c_mean * S
        H = h * h * w_mean * np.einsum("fki,fkj->fij", blocks, blocks) + shift * np.eye(N)
        self.high_inv = np.linalg.inv(H)

    def __call__(self, r):
        N, m, kc = self.N, self.m, self.kc
        R = dstn(r.reshape(N, m, m), type=1, axes=(1, 2), norm="ortho")
        out = np.empty_like(R)
        out[:, :kc, :kc] = sla.cho_solve(self.coarse, R[:, :kc, :kc].ravel()).reshape(N, kc, kc)
        out[:, self.high] = np.einsum("fij,jf->if", self.high_inv, R[:, self.high])
        return dstn(out, type=1, axes=(1, 2), norm="ortho").ravel()


class QRMSolver:
    """Minimiser of J for a fixed operator; data and right-hand side vary per call.

    Parameters
    ----------
    grid : Grid2D
    S : ndarray
        Stiffness matrix of the time basis.
    c, weight : ndarray
        Coefficient and Carleman weight on the full grid.
    eps : float
        Optional Tikhonov term ``eps h^2 |V_inner|^2``.
    neumann_order : {1, 2}
        Normal-derivative relation used for the first interior layer.
    normalize_weight : bool
        Divide the weight by its maximum (does not move the minimiser).
    method : {"auto", "direct", "cg"}
    coarse_modes : int, optional
        Side of the exactly-treated low-frequency block in the CG
        preconditioner; chosen from ``COARSE_BUDGET`` by default.
    """

    def __init__(self, grid: Grid2D, S, c, weight, eps: float = 0.0, neumann_order: int = 1,
                 normalize_weight: bool = True, method: str = "auto", coarse_modes=None):
        n, h = grid.Nx, grid.h
        if n < 6:
            raise ValueError("need Nx >= 6 to leave unknowns after elimination")
        self.grid = grid
        self.S = np.asarray(S, float)
        self.N = N = self.S.shape[0]
        if self.S.shape != (N, N):
            raise ValueError("S must be square")
        for name, arr in (("c", c), ("weight", weight)):
            if np.shape(arr) != grid.shape or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite and sampled on the grid")
        W = np.asarray(weight, float)
        if W.min() <= 0:
            raise ValueError("Carleman weight must be positive")
        if normalize_weight:
            W = W / W.max()
        if not eps >= 0:
            raise ValueError("eps must be >= 0")
        self.eps = float(eps)
        self.W_int = W[1:-1, 1:-1].ravel()
        c_int = np.asarray(c, float)[1:-1, 1:-1].ravel()
        self.elim = _Elimination(grid, neumann_order)

        L = _laplacian_matrix(n, h)
        R_int = sp.csr_matrix((np.ones(c_int.size), (np.arange(c_int.size), grid.interior_idx)),
                              shape=(c_int.size, grid.size))
        self._L, self._CR = L, sp.diags(c_int) @ R_int
        rs = np.sqrt(self.W_int) * h
        self.row_scale = np.tile(rs, N)
        A1 = (sp.diags(rs) @ L @ self.elim.E).tocsr()
        A2 = (sp.diags(rs) @ self._CR @ self.elim.E).tocsr()
        self.A = (sp.kron(sp.identity(N), A1) - sp.kron(sp.csr_matrix(self.S), A2)).tocsr()
        self.n_unknowns = self.A.shape[1]
        self._shift = self.eps * h * h

        if method == "auto":
            method = "direct" if self.n_unknowns <= DIRECT_MAX_UNKNOWNS else "cg"
        if method == "direct":
            normal = (self.A.T @ self.A).tocsc()
            if self._shift > 0:
                normal = normal + self._shift * sp.identity(self.n_unknowns, format="csc")
            try:
                self._lu = spla.splu(normal, permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise SolverError(f"normal equations are singular: {exc}") from exc
        elif method == "cg":
            m = n - 4
            if coarse_modes is None:
                coarse_modes = int(np.sqrt(COARSE_BUDGET / N))
            kc = max(1, min(int(coarse_modes), m))
            self._precond = _TwoLevelPreconditioner(
                A1, A2, self.S, m, h, float(np.mean(c_int)), float(np.mean(self.W_int)),
                self._shift, kc)
        else:
            raise ValueError(f"unknown method {method!r}")
        self.method = method
        self.last_info: dict = {}

    def _apply_full(self, V_full: np.ndarray) -> np.ndarray:
        """``Lap_h V - c S V`` on interior nodes for full-grid fields ``(N, n*n)``."""
        return (self._L @ V_full.T).T - (self._CR @ (self.S @ V_full).T).T

    def _check(self, F, data: BoundaryData):
        n, N = self.grid.Nx, self.N
        F = np.asarray(F, float)
        if F.shape != (N, n - 2, n - 2):
            raise ValueError(f"rhs must have shape {(N, n - 2, n - 2)}")
        nb = self.grid.boundary_idx.size
        if data.G.shape != (nb, N) or data.Q.shape != (nb, N):
            raise ValueError(f"boundary data must have shape {(nb, N)}")
        if not (np.all(np.isfinite(F)) and np.all(np.isfinite(data.G)) and np.all(np.isfinite(data.Q))):
            raise ValueError("non-finite right-hand side or boundary data")
        return F

    def solve(self, F, data: BoundaryData, guess=None) -> np.ndarray:
        """Minimiser as full-grid fields ``(N, Nx, Nx)``.

        ``guess`` (full-grid fields) warm-starts the iterative route.
        """
        F = self._check(F, data)
        fixed = self._apply_full(self.elim.offset(data)) + F.reshape(self.N, -1)
        b = -self.row_scale * fixed.ravel()
        rhs = self.A.T @ b
        if self.method == "direct":
            x = self._lu.solve(rhs)
            self.last_info = {"method": "direct"}
        else:
            x0 = None
            if guess is not None:
                x0 = np.asarray(guess, float).reshape(self.N, -1)[:, self.elim.inner_nodes].ravel()
            x = self._cg(rhs, x0)
        if not np.all(np.isfinite(x)):
            raise SolverError("solver produced non-finite values")
        V = self.elim.lift(x.reshape(self.N, -1), data)
        return V.reshape(self.N, self.grid.Nx, self.grid.Nx)

    def _cg(self, rhs, x0):
        A, shift = self.A, self._shift
        n = self.n_unknowns
        normal = spla.LinearOperator((n, n), matvec=lambda x: A.T @ (A @ x) + shift * x)
        prec = spla.LinearOperator((n, n), matvec=self._precond)
        count = [0]

        def tick(_):
            count[0] += 1

        x, info = spla.cg(normal, rhs, x0=x0, rtol=CG_RTOL, atol=0.0, maxiter=CG_MAXITER,
                          M=prec, callback=tick)
        self.last_info = {"method": "cg", "iterations": count[0], "info": info}
        log.debug("cg: %d iterations (info=%d)", count[0], info)
        if info != 0:
            # accept a stagnated solve only if it is already accurate
            rel = np.linalg.norm(normal @ x - rhs) / max(np.linalg.norm(rhs), 1e-300)
            if not rel < 1e-8:
                raise SolverError(f"CG did not converge (info={info}, relative residual {rel:.2e})")
        return x

    def residual(self, V, F) -> np.ndarray:
        """``Lap_h V - c S V + F`` on interior nodes, ``(N, Nx-2, Nx-2)``."""
        n = self.grid.Nx
        r = self._apply_full(np.asarray(V, float).reshape(self.N, -1))
        r += np.asarray(F, float).reshape(self.N, -1)
        return r.reshape(self.N, n - 2, n - 2)

    def objective(self, V, F) -> float:
        """J(V) with the solver's (normalised) weight and the h^2 cell factor."""
        r = self.residual(V, F).reshape(self.N, -1)
        J = float(np.sum(self.W_int * r**2)) * self.grid.h ** 2
        if self.eps > 0:
            x = np.asarray(V).reshape(self.N, -1)[:, self.elim.inner_nodes]
            J += self._shift * float(np.sum(x**2))
        return J

    def optimality_defect(self, V, F) -> float:
        """Relative gradient of J over admissible directions.

        Discrete form of the variational identity: the weighted residual is
        orthogonal to (Lap_h - c S) h for every h vanishing with its normal
        derivative on the boundary.
        """
        r = self.row_scale * self.residual(V, F).ravel()
        g = self.A.T @ r
        if self.eps > 0:
            g = g + self._shift * np.asarray(V).reshape(self.N, -1)[:, self.elim.inner_nodes].ravel()
        scale = spla.norm(self.A) * max(np.linalg.norm(r), 1e-300)
        return float(np.linalg.norm(g) / scale)

    def feasible_perturbation(self, rng, scale: float = 1.0) -> np.ndarray:
        """Random direction keeping the Cauchy data, as full-grid fields."""
        x = scale * rng.standard_normal((self.N, self.elim.inner_nodes.size))
        return (self.elim.E @ x.T).T.reshape(self.N, self.grid.Nx, self.grid.Nx)

    def boundary_defect(self, V, data: BoundaryData) -> float:
        """Max violation of the eliminated constraints (ring and first layer)."""
        V = np.asarray(V, float).reshape(self.N, -1)
        ref = self.elim.lift(V[:, self.elim.inner_nodes], data)
        fixed = np.concatenate([self.grid.boundary_idx, self.elim.layer_nodes])
        return float(np.max(np.abs(V[:, fixed] - ref[:, fixed])))


def write_residual_csv(path, solver: QRMSolver, V, F) -> None:
    """Per-mode residual ``Lap_h V - c S V + F`` on interior nodes, columns ``x,y,r1..rN``."""
    grid = solver.grid
    inner = Grid2D(grid.R - grid.h, grid.Nx - 2)
    r = solver.residual(V, F)
    write_field_csv(path, inner, r if r.shape[0] > 1 else r[0],
                    names=[f"r{m + 1}" for m in range(r.shape[0])])


def solve_linearized(grid: Grid2D, S, c, weight, rhs, data: BoundaryData, **options) -> np.ndarray:
    """One-shot minimiser of J; see :class:`QRMSolver` for ``options``."""
    return QRMSolver(grid, S, c, weight, **options).solve(rhs, data)


def nonlinear_rhs(U: np.ndarray, basis: TimeBasis, F: Nonlinearity, grid: Grid2D,
                  n_time: int = RHS_TIME_NODES, chunk: int = 2048) -> np.ndarray:
    """Projected nonlinearity ``F_m(x)`` on interior nodes, ``(N, Nx-2, Nx-2)``.

    The truncated series and its gradient are evaluated at ``n_time``
    Gauss-Legendre nodes in time, F is applied pointwise, and the result is
    projected back onto each Psi_m. Nodes are processed ``chunk`` at a time
    to bound memory.
    """
    U = np.asarray(U, float)
    N, n = basis.N, grid.Nx
    if U.shape != (N, n, n):
        raise ValueError(f"U must have shape {(N, n, n)}")
    if F.is_zero:
        return np.zeros((N, n - 2, n - 2))
    if not np.all(np.isfinite(U)):
        raise ValueError("U has non-finite entries")
    t, w = gauss_legendre(n_time, basis.T)
    psi = basis.evaluate(t)
    wpsi = psi * w
    ux, uy = gradient(U, grid.h)
    vals_u = U[:, 1:-1, 1:-1].reshape(N, -1)
    ux, uy = ux.reshape(N, -1), uy.reshape(N, -1)
    X, Y = grid.mesh()
    x = X[1:-1, 1:-1].reshape(1, -1)
    y = Y[1:-1, 1:-1].reshape(1, -1)
    out = np.empty((N, x.size))
    for lo in range(0, x.size, chunk):
        sl = slice(lo, lo + chunk)
        s = psi.T @ vals_u[:, sl]
        vals = np.broadcast_to(
            np.asarray(F(x[:, sl], y[:, sl], t[:, None], s, psi.T @ ux[:, sl], psi.T @ uy[:, sl]),
                       float), s.shape)
        bad = ~np.isfinite(vals)
        if bad.any():
            q, node = np.argwhere(bad)[0]
            node += lo
            raise ValueError(f"non-finite F at node {node} (x={x[0, node]:.4g}, "
                             f"y={y[0, node]:.4g}), t={t[q]:.4g}")
        out[:, sl] = wpsi @ vals
    return out.reshape(N, n - 2, n - 2)
