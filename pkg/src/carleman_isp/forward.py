"""Explicit finite-difference solver for c u_t = Laplace(u) + F(x, t, u, grad u).

The equation is solved on a large square with zero Dirichlet data, and the
lateral Cauchy data (u and its outward normal derivative) are read off on
the boundary of a smaller, node-aligned square inside it.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, GridAlignmentError, StabilityError
from .grid import FACES, Grid2D, grid_offset, gradient, normal_trace

log = logging.getLogger(__name__)

CFL_SAFETY = 0.9


def _smooth_step(z):
    """C-infinity transition: 0 for z <= 0, 1 for z >= 1."""
    z = np.clip(z, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(z > 0, np.exp(-1.0 / np.where(z > 0, z, 1.0)), 0.0)
        b = np.where(z < 1, np.exp(-1.0 / np.where(z < 1, 1.0 - z, 1.0)), 0.0)
    return a / (a + b)


def truncation_factor(s, p1, p2, bound: float):
    """Smooth cut-off chi(s, p): 1 below ``bound``, 0 above ``2 * bound``.

    The argument is |s| + |p| with |p| the Euclidean norm of the gradient.
    """
    z = np.abs(s) + np.hypot(p1, p2)
    return 1.0 - _smooth_step(z / bound - 1.0)


@dataclass(frozen=True)
class Nonlinearity:
    """Vectorised source term ``F(x, y, t, s, p1, p2)``.

    ``bound`` is the cut-off level M * sqrt(T); when set, ``F`` is replaced by
    chi * F so that it vanishes once |s| + |p| exceeds ``2 * bound``.
    """

    func: Callable
    name: str = "custom"
    bound: Optional[float] = None

    def __call__(self, x, y, t, s, p1, p2):
        val = self.func(x, y, t, s, p1, p2)
        if self.bound is not None:
            val = val * truncation_factor(s, p1, p2, self.bound)
        return val

    def truncated(self, M: float, T: float) -> "Nonlinearity":
        return replace(self, bound=float(M) * math.sqrt(T))

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"


ZERO = Nonlinearity(lambda x, y, t, s, p1, p2: np.zeros(np.broadcast(s, p1).shape), "zero")


def peaks_coefficient(grid: Grid2D) -> np.ndarray:
    """Scaled Matlab ``peaks`` surface, ``1 + peaks(x, y) / 50``."""
    X, Y = grid.mesh()
    return peaks(X, Y)


def peaks(x, y):
    return 1.0 + (3.0 * (1.0 - x) ** 2 * np.exp(-x**2 - (y + 1.0) ** 2)
                  - 10.0 * (x / 5.0 - x**3 - y**5) * np.exp(-x**2 - y**2)
                  - np.exp(-(x + 1.0) ** 2 - y**2) / 3.0) / 50.0


@dataclass
class ForwardConfig:
    """Inputs of the forward simulation.

    ``c`` and ``p`` are sampled on the outer grid. ``dt=None`` picks
    ``CFL_SAFETY * min(c) * h^2 / 4``, shrunk so that the step count is a
    multiple of ``n_t_out``. ``check_support`` enforces that p vanishes
    outside the inner square (the setting of the inverse problem); switch
    it off for verification runs with a global initial state.
    """

    outer: Grid2D
    inner: Grid2D
    T: float
    c: np.ndarray
    p: np.ndarray
    F: Nonlinearity = ZERO
    dt: Optional[float] = None
    n_t_out: int = 256
    check_support: bool = True

    def validate(self):
        if not (self.outer.R > self.inner.R > 0):
            raise ConfigError("need R_outer > R > 0")
        grid_offset(self.outer, self.inner)
        if not (np.isfinite(self.T) and self.T > 0):
            raise ConfigError(f"T must be positive, got {self.T}")
        if self.n_t_out < 2 or self.n_t_out % 2:
            raise ConfigError("n_t_out must be a positive even number (Simpson rule)")
        for name, arr in (("c", self.c), ("p", self.p)):
            if np.shape(arr) != self.outer.shape:
                raise ConfigError(f"{name} must have shape {self.outer.shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} has non-finite values")
        if np.min(self.c) <= 0:
            raise ConfigError("c must be bounded below by a positive constant")
        if not self.check_support:
            return
        X, Y = self.outer.mesh()
        outside = np.maximum(np.abs(X), np.abs(Y)) >= self.inner.R - 0.5 * self.inner.h
        if np.any(self.p[outside] != 0):
            raise ConfigError("initial condition p must be supported inside the inner domain")

    def stable_dt(self) -> float:
        return CFL_SAFETY * float(np.min(self.c)) * self.outer.h ** 2 / 4.0

    def time_stepping(self):
        """Return ``(dt, n_steps, stride)``."""
        limit = float(np.min(self.c)) * self.outer.h ** 2 / 4.0
        if self.dt is None:
            stride = math.ceil(self.T / (self.n_t_out * self.stable_dt()))
        else:
            if self.dt > limit:
                raise StabilityError(
                    f"dt={self.dt:g} exceeds the explicit stability limit {limit:g}")
            stride = math.ceil(self.T / (self.n_t_out * self.dt) - 1e-9)
        n_steps = stride * self.n_t_out
        return self.T / n_steps, n_steps, stride


@dataclass
class ForwardSolution:
    """Solution sampled at ``n_t_out + 1`` uniform times.

    ``window`` holds u on the inner grid plus two extra node layers on every
    side (enough for the one-sided normal stencil); ``final`` is the full
    outer field at t = T.
    """

    times: np.ndarray
    window: np.ndarray
    final: np.ndarray
    outer: Grid2D
    inner: Grid2D
    dt: float
    n_steps: int
    coefficients: Optional[np.ndarray] = None

    @property
    def window_grid(self) -> Grid2D:
        return Grid2D(self.inner.R + 2 * self.inner.h, self.inner.Nx + 4)

    def inner_field(self) -> np.ndarray:
        """u on the inner grid at every stored time, ``(n_t, Nx, Nx)``."""
        return self.window[:, 2:-2, 2:-2]

    def inner_coefficients(self) -> np.ndarray:
        """Streamed time projection on the inner grid, ``(N, Nx, Nx)``."""
        if self.coefficients is None:
            raise ValueError("solution was computed without a streamed projection")
        return self.coefficients[:, 2:-2, 2:-2]


def solve_forward(cfg: ForwardConfig, check_every: int = 200, project_onto=None,
                  batch: int = 64) -> ForwardSolution:
    """March the explicit scheme to t = T.

    With ``project_onto`` (a basis exposing ``evaluate(t)`` and ``N``) the
    stored window is also projected onto the basis while marching, by the
    composite Simpson rule over every time step. This resolves the fast
    initial transient that the subsampled output cannot, at the cost of
    ``N`` window fields of memory. The result is
    ``ForwardSolution.coefficients``, shaped like one window per mode.

    Raises
    ------
    StabilityError
        If an explicit ``dt`` violates the stability limit, or the field
        becomes non-finite (the offending step is reported).
    """
    cfg.validate()
    dt, n_steps, stride = cfg.time_stepping()
    outer, inner = cfg.outer, cfg.inner
    h = outer.h
    k = grid_offset(outer, inner)
    lo, hi = k - 2, k + inner.Nx + 2

    X, Y = outer.mesh()
    Xi, Yi = X[1:-1, 1:-1], Y[1:-1, 1:-1]
    rate = dt / np.asarray(cfg.c, float)[1:-1, 1:-1]
    u = np.array(cfg.p, dtype=float)
    u[0, :] = u[-1, :] = u[:, 0] = u[:, -1] = 0.0
    nonlinear = not cfg.F.is_zero

    window = np.empty((cfg.n_t_out + 1, hi - lo, hi - lo))
    window[0] = u[lo:hi, lo:hi]
    lap = np.empty_like(Xi)
    proj = None
    if project_onto is not None:
        step_t = np.linspace(0.0, cfg.T, n_steps + 1)
        w = np.full(n_steps + 1, 2.0)
        w[1::2] = 4.0
        w[0] = w[-1] = 1.0
        wpsi = project_onto.evaluate(step_t) * (w * dt / 3.0)
        coef = np.zeros((project_onto.N, (hi - lo) ** 2))
        buf = np.empty((batch, (hi - lo) ** 2))
        proj = {"start": 0, "fill": 0}

        def flush():
            n, s0 = proj["fill"], proj["start"]
            coef[:] += wpsi[:, s0:s0 + n] @ buf[:n]
            proj["start"], proj["fill"] = s0 + n, 0

        def record():
            buf[proj["fill"]] = u[lo:hi, lo:hi].ravel()
            proj["fill"] += 1
            if proj["fill"] == batch:
                flush()

        record()
    log.info("forward: %d x %d grid, %d steps, dt=%.3e", outer.Nx, outer.Nx, n_steps, dt)
    for step in range(n_steps):
        t = step * dt
        np.add(u[2:, 1:-1], u[:-2, 1:-1], out=lap)
        lap += u[1:-1, 2:]
        lap += u[1:-1, :-2]
        lap -= 4.0 * u[1:-1, 1:-1]
        lap /= h * h
        if nonlinear:
            ux, uy = gradient(u, h)
            lap += cfg.F(Xi, Yi, t, u[1:-1, 1:-1], ux, uy)
        u[1:-1, 1:-1] += rate * lap
        if (step + 1) % check_every == 0 and not np.all(np.isfinite(u)):
            raise StabilityError(f"non-finite field at step {step + 1} (t={t + dt:.4g})")
        if (step + 1) % stride == 0:
            window[(step + 1) // stride] = u[lo:hi, lo:hi]
        if proj is not None:
            record()
    if not np.all(np.isfinite(u)):
        raise StabilityError(f"non-finite field at final step {n_steps}")
    coefficients = None
    if proj is not None:
        flush()
        coefficients = coef.reshape(project_onto.N, hi - lo, hi - lo)
    times = np.linspace(0.0, cfg.T, cfg.n_t_out + 1)
    return ForwardSolution(times, window, u, outer, inner, dt, n_steps, coefficients)


@dataclass
class CauchyTraces:
    """Boundary data on the inner square; arrays are ``(n_boundary, n_times)``."""

    grid: Grid2D
    times: np.ndarray
    g: np.ndarray
    q: np.ndarray
    delta: float = 0.0
    seed: Optional[int] = field(default=None)


def extract_traces(sol: ForwardSolution, grid: Grid2D | None = None) -> CauchyTraces:
    inner = grid or sol.inner
    if inner != sol.inner:
        raise GridAlignmentError(
            f"solution was stored for {sol.inner}, traces requested on {inner}")
    g = inner.boundary_values(sol.inner_field()).T
    q = normal_trace(sol.window, sol.window_grid, inner).T
    return CauchyTraces(inner, sol.times.copy(), np.ascontiguousarray(g), np.ascontiguousarray(q))


def multiplicative_noise(values: np.ndarray, delta: float, rng) -> np.ndarray:
    """``values * (1 + delta * U[-1, 1])`` entrywise."""
    return values * (1.0 + delta * rng.uniform(-1.0, 1.0, size=np.shape(values)))


def add_noise(traces: CauchyTraces, delta: float, seed: int = 0) -> CauchyTraces:
    if not delta >= 0:
        raise ValueError(f"noise level must be >= 0, got {delta}")
    if delta == 0:
        return traces
    rng = np.random.default_rng(seed)
    g = multiplicative_noise(traces.g, delta, rng)
    q = multiplicative_noise(traces.q, delta, rng)
    return replace(traces, g=g, q=q, delta=delta, seed=seed)


def write_traces_csv(traces: CauchyTraces, path) -> None:
    """Columns ``face,node_x,node_y,t,g,q``; one row per (node, time)."""
    grid = traces.grid
    i, j = grid.boundary_ij.T
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["face", "node_x", "node_y", "t", "g", "q"])
        for b in range(i.size):
            face = FACES[grid.boundary_face[b]]
            x, y = repr(float(grid.xs[i[b]])), repr(float(grid.xs[j[b]]))
            for n, t in enumerate(traces.times):
                out.writerow([face, x, y, repr(float(t)),
                              repr(float(traces.g[b, n])), repr(float(traces.q[b, n]))])


def read_traces_csv(path, grid: Grid2D) -> CauchyTraces:
    data = np.genfromtxt(Path(path), delimiter=",", skip_header=1, usecols=(3, 4, 5))
    nb = grid.boundary_idx.size
    if data.shape[0] % nb:
        raise ValueError("trace file does not match the grid's boundary node count")
    data = data.reshape(nb, -1, 3)
    return CauchyTraces(grid, data[0, :, 0].copy(), data[:, :, 1].copy(), data[:, :, 2].copy())
