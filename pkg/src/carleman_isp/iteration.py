"""Outer fixed-point loop: linearise, minimise, extract the source, repeat."""
from __future__ import annotations

import logging
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import SolverError
from .forward import Nonlinearity
from .grid import Grid2D
from .projection import BoundaryData, reconstruct_time
from .qrm import QRMSolver, nonlinear_rhs
from .time_basis import TimeBasis

log = logging.getLogger(__name__)


@dataclass
class IterationReport:
    err: list = field(default_factory=list)
    J_values: list = field(default_factory=list)
    theta_hat: Optional[float] = None
    K: int = 0
    stop_reason: str = ""
    sources: list = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["k", "err_k", "J_k"])
            for k, (e, J) in enumerate(zip(self.err, self.J_values), start=1):
                out.writerow([k, repr(float(e)), repr(float(J))])


def extract_source(U: np.ndarray, basis: TimeBasis) -> np.ndarray:
    """p(x) = sum_n u_n(x) Psi_n(0)."""
    U = np.asarray(U)
    if U.shape[0] != basis.N:
        raise ValueError(f"expected {basis.N} modes, got {U.shape[0]}")
    return reconstruct_time(U, basis, 0.0)


def relative_change(p_new: np.ndarray, p_old: np.ndarray) -> float:
    """sup|p_new - p_old| / sup|p_new|; infinite when p_new vanishes."""
    top = float(np.max(np.abs(p_new)))
    if top == 0.0:
        return float("inf")
    return float(np.max(np.abs(p_new - p_old))) / top


def fit_contraction(err, skip: int = 1) -> Optional[float]:
    """exp(slope) of a least-squares line through log err_k versus k.

    The first ``skip`` entries are ignored (with a zero start err_1 is 1 by
    construction). Zero or non-finite entries are dropped.
    """
    k = np.arange(1, len(err) + 1)[skip:]
    e = np.asarray(err[skip:], float)
    ok = np.isfinite(e) & (e > 0)
    if ok.sum() < 2:
        return None
    slope = np.polyfit(k[ok], np.log(e[ok]), 1)[0]
    return float(np.exp(slope))


def run_iteration(data: BoundaryData, S: np.ndarray, c: np.ndarray, weight: np.ndarray,
                  F: Nonlinearity, basis: TimeBasis, K_max: int = 8, tol: float = 1e-3,
                  U0: Optional[np.ndarray] = None, solver: Optional[QRMSolver] = None,
                  keep_sources: bool = True, **solver_options):
    """Run the contraction iteration from ``U0`` (zero by default).

    Returns the last iterate ``(N, Nx, Nx)`` and an :class:`IterationReport`.
    A prebuilt ``solver`` may be passed to reuse its factorisation or
    preconditioner; it must have been built for the same grid, S, c and
    weight.
    """
    if K_max < 1:
        raise ValueError("K_max must be >= 1")
    grid: Grid2D = data.grid
    N, n = basis.N, grid.Nx
    if data.N != N:
        raise ValueError(f"boundary data has {data.N} modes, basis has {N}")
    if solver is None:
        solver = QRMSolver(grid, S, c, weight, **solver_options)
    U = np.zeros((N, n, n)) if U0 is None else np.array(U0, dtype=float)
    if U.shape != (N, n, n):
        raise ValueError(f"U0 must have shape {(N, n, n)}")

    report = IterationReport()
    p_prev = extract_source(U, basis)
    guess = None
    for k in range(1, K_max + 1):
        rhs = nonlinear_rhs(U, basis, F, grid)
        try:
            U = solver.solve(rhs, data, guess=guess)
        except SolverError as exc:
            raise SolverError(f"iteration {k}: {exc}") from exc
        guess = U
        p = extract_source(U, basis)
        report.err.append(relative_change(p, p_prev))
        report.J_values.append(solver.objective(U, rhs))
        if keep_sources:
            report.sources.append(p)
        report.K = k
        log.info("iteration %d: err=%.3e J=%.4e", k, report.err[-1], report.J_values[-1])
        p_prev = p
        if report.err[-1] < tol:
            report.stop_reason = "tolerance"
            break
    else:
        report.stop_reason = "max_iterations"
    if report.K >= 3:
        report.theta_hat = fit_contraction(report.err)
    return U, report
