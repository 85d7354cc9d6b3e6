import numpy as np
import pytest

from carleman_isp.carleman import CarlemanParams, weight_field
from carleman_isp.forward import peaks_coefficient
from carleman_isp.grid import build_grid, laplacian
from carleman_isp.projection import BoundaryData
from carleman_isp.time_basis import build_basis, stiffness_matrix

# inward (di, dj) per face x-, x+, y-, y+
INWARD = ((1, 0), (-1, 0), (0, 1), (0, -1))


def smooth_modes(grid, N):
    X, Y = grid.mesh()
    return np.array([np.cos((k % 3 + 1) * X) * np.exp(-(k % 4) * Y) * (1 + 0.1 * k)
                     for k in range(N)])


def consistent_data(grid, U, order=1):
    """Cauchy data (G, Q) that U satisfies exactly under the discrete normal relation.

    First order: V_layer = G - h Q. Second order: V_layer = (3 G - 2 h Q + V_2) / 4
    whenever the node two steps inward is off the first layer; otherwise first order.
    """
    n, h = grid.Nx, grid.h
    G = grid.boundary_values(U).T
    Q = np.zeros_like(G)
    for b, (i, j) in enumerate(grid.boundary_ij):
        di, dj = INWARD[grid.boundary_face[b]]
        li, lj = i + di, j + dj
        if not (1 <= li <= n - 2 and 1 <= lj <= n - 2):
            continue                                    # corner: Dirichlet only
        i2, j2 = li + di, lj + dj
        if order == 2 and 2 <= i2 <= n - 3 and 2 <= j2 <= n - 3:
            Q[b] = (3 * G[b] + U[:, i2, j2] - 4 * U[:, li, lj]) / (2 * h)
        else:
            Q[b] = (G[b] - U[:, li, lj]) / h
    return BoundaryData(grid, G, Q)


def manufactured(grid, S, c, U):
    """Right-hand side making U an exact zero of the residual."""
    return -(laplacian(U, grid.h) - c[1:-1, 1:-1] * np.einsum("mn,nij->mij", S, U[:, 1:-1, 1:-1]))


class Setup:
    def __init__(self, Nx, N, T=1.5):
        self.grid = build_grid(1.0, Nx)
        self.basis = build_basis(N, T)
        self.S = stiffness_matrix(self.basis).S
        self.c = peaks_coefficient(self.grid)
        self.W = weight_field(CarlemanParams(), self.grid)


@pytest.fixture(scope="session")
def small_setup():
    return Setup(14, 4)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.split(".")[0]), k)):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
