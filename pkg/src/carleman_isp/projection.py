"""Projection of time-dependent data onto the basis, and its inverse."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.integrate import simpson

from .forward import CauchyTraces, multiplicative_noise
from .grid import FACES, Grid2D, normal_trace, restrict
from .time_basis import TimeBasis

# Uniform samples per period of the fastest basis oscillation required by the
# projection quadrature; the fastest mode has about N half-waves on [0, T].
MIN_SAMPLES_PER_OSCILLATION = 4


@dataclass
class BoundaryData:
    """Projected Cauchy data ``G[b, m]``, ``Q[b, m]`` on the boundary nodes."""

    grid: Grid2D
    G: np.ndarray
    Q: np.ndarray
    delta: float = 0.0
    seed: Optional[int] = None

    @property
    def N(self) -> int:
        return self.G.shape[1]


def simpson_weights(times: np.ndarray) -> np.ndarray:
    """Weights ``w`` with ``w @ f == simpson(f, x=times)``."""
    return simpson(np.eye(times.size), x=times, axis=-1)


def _check_samples(times, basis: TimeBasis):
    times = np.asarray(times, float)
    if times.ndim != 1 or times.size < 3:
        raise ValueError("need at least three time samples")
    if abs(times[0]) > 1e-12 or abs(times[-1] - basis.T) > 1e-9 * basis.T:
        raise ValueError(f"time samples must span [0, {basis.T}]")
    if times.size - 1 < MIN_SAMPLES_PER_OSCILLATION * basis.N / 2:
        raise ValueError(
            f"{times.size} time samples are too few to project onto {basis.N} modes")
    return times


def projection_matrix(times, basis: TimeBasis) -> np.ndarray:
    """``(n_t, N)`` matrix M with ``samples @ M`` = coefficients."""
    times = _check_samples(times, basis)
    return simpson_weights(times)[:, None] * basis.evaluate(times).T


def project_field(u: np.ndarray, times, basis: TimeBasis) -> np.ndarray:
    """Coefficients ``u_n(x) = int u(x, t) Psi_n(t) dt``.

    ``u`` has time as its leading axis, ``(n_t, *space)``; the result is
    ``(N, *space)``.
    """
    u = np.asarray(u, float)
    M = projection_matrix(times, basis)
    flat = u.reshape(u.shape[0], -1)
    return (M.T @ flat).reshape((basis.N,) + u.shape[1:])


def project_boundary(traces: CauchyTraces, basis: TimeBasis, delta: float = 0.0,
                     seed: int = 0) -> BoundaryData:
    """Project g and q; optionally perturb G, Q multiplicatively by ``delta``."""
    if not delta >= 0:
        raise ValueError(f"noise level must be >= 0, got {delta}")
    M = projection_matrix(traces.times, basis)
    G = traces.g @ M
    Q = traces.q @ M
    if delta > 0:
        rng = np.random.default_rng(seed)
        G = multiplicative_noise(G, delta, rng)
        Q = multiplicative_noise(Q, delta, rng)
    return BoundaryData(traces.grid, G, Q, delta, seed if delta > 0 else None)


def boundary_from_coefficients(window_coefs: np.ndarray, window: Grid2D, grid: Grid2D,
                               delta: float = 0.0, seed: int = 0) -> BoundaryData:
    """G and Q from mode fields already projected in time.

    ``window_coefs`` are the coefficients ``(N, *window.shape)`` of u on a
    grid that extends ``grid`` by at least two node layers. Since taking
    traces commutes with the time projection, this equals
    :func:`project_boundary` applied to traces sampled at every step.
    Noise is applied exactly as there.
    """
    if not delta >= 0:
        raise ValueError(f"noise level must be >= 0, got {delta}")
    G = grid.boundary_values(restrict(window_coefs, window, grid)).T
    Q = normal_trace(window_coefs, window, grid).T
    if delta > 0:
        rng = np.random.default_rng(seed)
        G = multiplicative_noise(G, delta, rng)
        Q = multiplicative_noise(Q, delta, rng)
    return BoundaryData(grid, np.ascontiguousarray(G), np.ascontiguousarray(Q), delta,
                        seed if delta > 0 else None)


def reconstruct_time(U: np.ndarray, basis: TimeBasis, t: float) -> np.ndarray:
    """Evaluate the truncated series ``sum_n u_n(x) Psi_n(t)``."""
    psi = basis.evaluate(t)[:, 0]
    return np.tensordot(psi, np.asarray(U), axes=(0, 0))


def truncation_error(u_at_0: np.ndarray, U: np.ndarray, basis: TimeBasis) -> np.ndarray:
    """``e_N(x) = |u(x, 0) - sum_{n<=N} u_n(x) Psi_n(0)|``."""
    U = np.asarray(U)
    if U.shape[0] != basis.N or U.shape[1:] != np.shape(u_at_0):
        raise ValueError("coefficient stack does not match the field or the basis")
    return np.abs(np.asarray(u_at_0) - reconstruct_time(U, basis, 0.0))


def write_boundary_csv(data: BoundaryData, path) -> None:
    """Columns ``face,node_x,node_y,m,G,Q``."""
    grid = data.grid
    i, j = grid.boundary_ij.T
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["face", "node_x", "node_y", "m", "G", "Q"])
        for b in range(i.size):
            face = FACES[grid.boundary_face[b]]
            x, y = repr(float(grid.xs[i[b]])), repr(float(grid.xs[j[b]]))
            for m in range(data.N):
                out.writerow([face, x, y, m + 1, repr(float(data.G[b, m])),
                              repr(float(data.Q[b, m]))])


def read_boundary_csv(path, grid: Grid2D) -> BoundaryData:
    data = np.genfromtxt(Path(path), delimiter=",", skip_header=1, usecols=(4, 5))
    nb = grid.boundary_idx.size
    if data.shape[0] % nb:
        raise ValueError("boundary file does not match the grid's boundary node count")
    data = data.reshape(nb, -1, 2)
    return BoundaryData(grid, data[:, :, 0].copy(), data[:, :, 1].copy())
