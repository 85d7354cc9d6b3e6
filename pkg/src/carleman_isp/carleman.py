"""Carleman weight exp(2 lambda b^-beta r^beta) and a numerical estimate check."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grid import Grid2D, gradient, hessian, laplacian

# exp() overflows a little above 709
MAX_EXPONENT = 700.0


@dataclass(frozen=True)
class CarlemanParams:
    x0: tuple[float, float] = (0.0, -3.0)
    b: float = 5.0
    lam: float = 40.0
    beta: float = 20.0

    def exponent(self, r):
        return 2.0 * self.lam * (np.asarray(r) / self.b) ** self.beta

    def validate(self, grid: Grid2D) -> None:
        """Check the weight's hypotheses over the closed square of ``grid``.

        r is evaluated on the grid nodes and, for its extremes, exactly over
        the square, so a margin is not needed.
        """
        if not (self.lam > 0 and self.beta > 0 and self.b > 0):
            raise ConfigError("lambda, beta and b must be positive")
        r_min, r_max = _distance_range(self.x0, grid.R)
        if r_min <= 1.0:
            raise ConfigError(
                f"x0={self.x0} gives min r = {r_min:.4g}; need r > 1 on the closed domain")
        if self.b <= r_max:
            raise ConfigError(f"b={self.b} must exceed max r = {r_max:.4g}")
        if self.exponent(r_max) > MAX_EXPONENT:
            raise ConfigError("Carleman weight overflows; reduce lambda or beta")


def _distance_range(x0, R):
    x0 = np.asarray(x0, float)
    nearest = np.clip(x0, -R, R)
    r_min = float(np.hypot(*(x0 - nearest)))
    corners = np.array([[-R, -R], [-R, R], [R, -R], [R, R]])
    r_max = float(np.max(np.hypot(*(corners - x0).T)))
    return r_min, r_max


def distance_field(params: CarlemanParams, grid: Grid2D) -> np.ndarray:
    X, Y = grid.mesh()
    return np.hypot(X - params.x0[0], Y - params.x0[1])


def weight_field(params: CarlemanParams, grid: Grid2D) -> np.ndarray:
    """W(x) = exp(2 lambda (r/b)^beta) on every node of ``grid``."""
    params.validate(grid)
    return np.exp(params.exponent(distance_field(params, grid)))


def carleman_diagnostic(v: np.ndarray, grid: Grid2D, params: CarlemanParams,
                        lambdas, tol: float = 1e-8) -> list[dict]:
    """Compare both sides of the weighted estimate for a test function ``v``.

    For each lambda returns the left side ``int W |Lap v|^2`` and the right
    side without its unknown constant,
    ``int W (|D^2 v|^2 / lambda + lambda^3 |v|^2 + lambda |grad v|^2)``,
    all as h^2-weighted sums over interior nodes.

    ``v`` must vanish, together with its discrete normal derivative, on the
    boundary (zero on the boundary ring and the first interior layer to
    within ``tol`` relative to max |v|).
    """
    v = np.asarray(v, float)
    scale = max(np.max(np.abs(v)), 1e-300)
    ring = np.zeros(grid.shape, bool)
    ring[:2, :] = ring[-2:, :] = ring[:, :2] = ring[:, -2:] = True
    # first-order normal difference reduces to v(layer) - v(boundary)
    if np.max(np.abs(v[ring])) > tol * scale:
        raise ValueError("test function does not satisfy v = dv/dnu = 0 on the boundary")

    h = grid.h
    cell = h * h
    r = distance_field(params, grid)[1:-1, 1:-1]
    lap2 = laplacian(v, h) ** 2
    uxx, uxy, uyy = hessian(v, h)
    hess2 = uxx**2 + 2.0 * uxy**2 + uyy**2
    ux, uy = gradient(v, h)
    grad2 = ux**2 + uy**2
    val2 = v[1:-1, 1:-1] ** 2

    rows = []
    for lam in lambdas:
        p = CarlemanParams(params.x0, params.b, float(lam), params.beta)
        p.validate(grid)
        W = np.exp(p.exponent(r))
        lhs = cell * np.sum(W * lap2)
        rhs = cell * np.sum(W * (hess2 / lam + lam**3 * val2 + lam * grad2))
        rows.append({"lambda": float(lam), "lhs": lhs, "rhs0": rhs,
                     "ratio": lhs / rhs if rhs > 0 else float("nan")})
    return rows


def bump_field(grid: Grid2D) -> np.ndarray:
    """((x^2 - R^2)(y^2 - R^2))^2 scaled to unit maximum, then flattened at the rim.

    The polynomial vanishes to second order on the boundary; the first
    interior layer is zeroed as well so that the discrete Cauchy data are
    exactly zero.
    """
    X, Y = grid.mesh()
    R = grid.R
    v = ((X**2 - R**2) * (Y**2 - R**2)) ** 2
    v /= v.max()
    v[:2, :] = v[-2:, :] = v[:, :2] = v[:, -2:] = 0.0
    return v


def write_diagnostic_csv(rows, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        out = csv.DictWriter(fh, fieldnames=["lambda", "lhs", "rhs0", "ratio"])
        out.writeheader()
        for row in rows:
            out.writerow({k: repr(float(v)) for k, v in row.items()})
