"""Uniform square grids and finite-difference stencils.

Fields are stored as 2-D arrays ``u[i, j]`` with ``x = xs[i]`` and
``y = xs[j]`` (``ij`` indexing). Flattening row-major gives the node
number ``i * Nx + j``. Operators accept arrays with arbitrary leading
axes, so a stack of N modes ``(N, Nx, Nx)`` is handled in one call.

Boundary nodes are listed face by face in a fixed order:

    x-  (i = 0,      j = 0..Nx-1)
    x+  (i = Nx-1,   j = 0..Nx-1)
    y-  (j = 0,      i = 1..Nx-2)
    y+  (j = Nx-1,   i = 1..Nx-2)

so the four corners belong to the x faces.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import GridAlignmentError

FACES = ("x-", "x+", "y-", "y+")


@dataclass(frozen=True)
class Grid2D:
    """``Nx x Nx`` uniform grid over the closed square [-R, R]^2."""

    R: float
    Nx: int

    def __post_init__(self):
        if isinstance(self.Nx, bool) or int(self.Nx) != self.Nx or self.Nx < 3:
            raise ValueError(f"Nx must be an integer >= 3, got {self.Nx!r}")
        if not np.isfinite(self.R) or self.R <= 0:
            raise ValueError(f"R must be positive, got {self.R!r}")

    @property
    def h(self) -> float:
        return 2.0 * self.R / (self.Nx - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Nx, self.Nx)

    @property
    def size(self) -> int:
        return self.Nx * self.Nx

    @cached_property
    def xs(self) -> np.ndarray:
        return -self.R + self.h * np.arange(self.Nx)

    def mesh(self):
        """``(X, Y)`` coordinate arrays of shape ``(Nx, Nx)``."""
        return np.meshgrid(self.xs, self.xs, indexing="ij")

    @cached_property
    def boundary_ij(self) -> np.ndarray:
        """``(4(Nx-1), 2)`` array of boundary ``(i, j)`` in face order."""
        n = self.Nx
        full = np.arange(n)
        inner = np.arange(1, n - 1)
        parts = [
            np.column_stack([np.zeros(n, int), full]),
            np.column_stack([np.full(n, n - 1), full]),
            np.column_stack([inner, np.zeros(n - 2, int)]),
            np.column_stack([inner, np.full(n - 2, n - 1)]),
        ]
        return np.concatenate(parts)

    @cached_property
    def boundary_face(self) -> np.ndarray:
        """Face label index (into ``FACES``) for each boundary node."""
        n = self.Nx
        return np.repeat(np.arange(4), [n, n, n - 2, n - 2])

    @cached_property
    def boundary_idx(self) -> np.ndarray:
        i, j = self.boundary_ij.T
        return i * self.Nx + j

    @cached_property
    def interior_idx(self) -> np.ndarray:
        mask = np.zeros(self.shape, bool)
        mask[1:-1, 1:-1] = True
        return np.flatnonzero(mask)

    @cached_property
    def first_layer_idx(self) -> np.ndarray:
        mask = np.zeros(self.shape, bool)
        mask[1:-1, 1:-1] = True
        mask[2:-2, 2:-2] = False
        return np.flatnonzero(mask)

    def boundary_values(self, field: np.ndarray) -> np.ndarray:
        """Restrict ``(..., Nx, Nx)`` to boundary nodes, ``(..., 4(Nx-1))``."""
        i, j = self.boundary_ij.T
        return np.asarray(field)[..., i, j]


def build_grid(R: float, Nx: int) -> Grid2D:
    return Grid2D(float(R), int(Nx))


def laplacian(field: np.ndarray, h: float) -> np.ndarray:
    """Five-point Laplacian on interior nodes; output ``(..., Nx-2, Nx-2)``."""
    u = np.asarray(field)
    return (u[..., 2:, 1:-1] + u[..., :-2, 1:-1] + u[..., 1:-1, 2:]
            + u[..., 1:-1, :-2] - 4.0 * u[..., 1:-1, 1:-1]) / (h * h)


def gradient(field: np.ndarray, h: float, interior: bool = True):
    """Central-difference gradient ``(du/dx, du/dy)``.

    With ``interior=False`` the full grid is returned, using second-order
    one-sided differences on the edge rows.
    """
    u = np.asarray(field, dtype=float)
    if interior:
        ux = (u[..., 2:, 1:-1] - u[..., :-2, 1:-1]) / (2.0 * h)
        uy = (u[..., 1:-1, 2:] - u[..., 1:-1, :-2]) / (2.0 * h)
        return ux, uy
    ux, uy = np.gradient(u, h, axis=(-2, -1), edge_order=2)
    return ux, uy


def hessian(field: np.ndarray, h: float):
    """Discrete Hessian ``(u_xx, u_xy, u_yy)`` on interior nodes."""
    u = np.asarray(field)
    uxx = (u[..., 2:, 1:-1] - 2.0 * u[..., 1:-1, 1:-1] + u[..., :-2, 1:-1]) / h**2
    uyy = (u[..., 1:-1, 2:] - 2.0 * u[..., 1:-1, 1:-1] + u[..., 1:-1, :-2]) / h**2
    uxy = (u[..., 2:, 2:] - u[..., 2:, :-2] - u[..., :-2, 2:] + u[..., :-2, :-2]) / (4.0 * h * h)
    return uxx, uxy, uyy


def grid_offset(big: Grid2D, small: Grid2D, tol: float = 1e-9) -> int:
    """Index of ``small``'s corner node (-R, -R) inside ``big``.

    Raises
    ------
    GridAlignmentError
        If spacings differ, ``small`` is not strictly inside ``big``, or its
        nodes do not coincide with nodes of ``big``.
    """
    if abs(big.h - small.h) > tol * small.h:
        raise GridAlignmentError(f"spacings differ: {big.h} vs {small.h}")
    k = (big.R - small.R) / small.h
    if abs(k - round(k)) > 1e-6:
        raise GridAlignmentError(
            f"(R_big - R)/h = {k:.6f} is not an integer; boundary nodes do not lie on the big grid")
    k = int(round(k))
    if k < 2:
        raise GridAlignmentError("inner domain needs at least two grid layers of margin")
    return k


def aligned_outer_radius(R: float, Nx: int, R_outer: float) -> float:
    """Smallest outer half-width >= ``R_outer`` whose grid shares nodes with the inner one."""
    h = 2.0 * R / (Nx - 1)
    k = int(np.ceil((R_outer - R) / h - 1e-9))
    return R + k * h


_STEP = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}


def normal_trace(big_field: np.ndarray, big: Grid2D, small: Grid2D) -> np.ndarray:
    """Outward normal derivative on the boundary of ``small``.

    ``big_field`` has shape ``(..., big.Nx, big.Nx)``. The second-order
    one-sided stencil ``(-3 u0 + 4 u1 - u2) / 2h`` steps outward from each
    boundary node into the surrounding domain. Output ``(..., 4(Nx-1))`` in
    ``small.boundary_ij`` order.
    """
    k = grid_offset(big, small)
    u = np.asarray(big_field)
    i, j = small.boundary_ij.T + k
    out = np.empty(u.shape[:-2] + (i.size,))
    for face, (di, dj) in _STEP.items():
        sel = small.boundary_face == face
        a, b = i[sel], j[sel]
        out[..., sel] = (-3.0 * u[..., a, b] + 4.0 * u[..., a + di, b + dj]
                         - u[..., a + 2 * di, b + 2 * dj]) / (2.0 * small.h)
    return out


def restrict(big_field: np.ndarray, big: Grid2D, small: Grid2D) -> np.ndarray:
    """Values of ``big_field`` at the nodes of ``small``."""
    k = grid_offset(big, small)
    return np.asarray(big_field)[..., k:k + small.Nx, k:k + small.Nx]


def write_field_csv(path, grid: Grid2D, field: np.ndarray, names=None) -> None:
    """Row-major CSV ``x,y,value`` (or ``x,y,v1..vN`` for a stack)."""
    arr = np.asarray(field, dtype=float)
    stack = arr.reshape(-1, grid.size) if arr.ndim == 3 else arr.reshape(1, grid.size)
    if names is None:
        names = ["value"] if stack.shape[0] == 1 else [f"v{n + 1}" for n in range(stack.shape[0])]
    X, Y = grid.mesh()
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["x", "y", *names])
        for node, (x, y) in enumerate(zip(X.ravel(), Y.ravel())):
            out.writerow([repr(float(x)), repr(float(y))] + [repr(float(v)) for v in stack[:, node]])


def read_field_csv(path, grid: Grid2D) -> np.ndarray:
    """Inverse of :func:`write_field_csv`; returns ``(Nx, Nx)`` or ``(N, Nx, Nx)``."""
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != grid.size:
        raise ValueError(f"expected {grid.size} rows, found {data.shape[0]}")
    values = data[:, 2:].T.reshape(-1, grid.Nx, grid.Nx)
    return values[0] if values.shape[0] == 1 else values
