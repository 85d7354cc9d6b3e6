import numpy as np
import pytest

from carleman_isp.forward import Nonlinearity, ZERO
from carleman_isp.projection import BoundaryData
from carleman_isp.qrm import QRMSolver, nonlinear_rhs, solve_linearized, write_residual_csv

from conftest import Setup, consistent_data, manufactured, smooth_modes
from oracles import projected_rhs_loops


def random_problem(setup, seed=0):
    rng = np.random.default_rng(seed)
    n, N = setup.grid.Nx, setup.basis.N
    nb = setup.grid.boundary_idx.size
    data = BoundaryData(setup.grid, rng.normal(size=(nb, N)), rng.normal(size=(nb, N)))
    return rng.normal(size=(N, n - 2, n - 2)), data


def test_zero_problem_gives_zero(small_setup):
    s = small_setup
    nb = s.grid.boundary_idx.size
    data = BoundaryData(s.grid, np.zeros((nb, 4)), np.zeros((nb, 4)))
    V = solve_linearized(s.grid, s.S, s.c, s.W, np.zeros((4, 12, 12)), data)
    assert np.all(V == 0)


@pytest.mark.parametrize("method, order", [("direct", 1), ("cg", 1), ("direct", 2), ("cg", 2)])
def test_manufactured_solution_recovered(method, order):
    s = Setup(16, 5)
    U = smooth_modes(s.grid, 5)
    F = manufactured(s.grid, s.S, s.c, U)
    data = consistent_data(s.grid, U, order)
    solver = QRMSolver(s.grid, s.S, s.c, s.W, neumann_order=order, method=method)
    V = solver.solve(F, data)
    assert np.abs(V - U).max() / np.abs(U).max() < 1e-8
    assert solver.objective(V, F) < 1e-16
    assert solver.boundary_defect(V, data) < 1e-12


def test_direct_and_cg_agree(small_setup):
    s = small_setup
    F, data = random_problem(s)
    a = QRMSolver(s.grid, s.S, s.c, s.W, method="direct").solve(F, data)
    cg = QRMSolver(s.grid, s.S, s.c, s.W, method="cg", coarse_modes=3)
    b = cg.solve(F, data)
    assert cg.last_info["iterations"] > 0
    assert np.abs(a - b).max() < 1e-8 * np.abs(a).max()


def test_minimizer_beats_feasible_perturbations(small_setup):
    s = small_setup
    F, data = random_problem(s, 1)
    solver = QRMSolver(s.grid, s.S, s.c, s.W)
    V = solver.solve(F, data)
    J0 = solver.objective(V, F)
    rng = np.random.default_rng(2)
    for _ in range(100):
        scale = 10.0 ** rng.uniform(-4, 0)
        D = solver.feasible_perturbation(rng, scale)
        assert solver.boundary_defect(V + D, data) < 1e-10
        assert solver.objective(V + D, F) >= J0 * (1 - 1e-12)
    assert solver.optimality_defect(V, F) < 1e-9


def test_deterministic(small_setup):
    s = small_setup
    F, data = random_problem(s, 3)
    a = solve_linearized(s.grid, s.S, s.c, s.W, F, data)
    b = solve_linearized(s.grid, s.S, s.c, s.W, F, data)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("normalize", [True, False])
def test_weight_scale_invariance(small_setup, normalize):
    s = small_setup
    F, data = random_problem(s, 4)
    a = solve_linearized(s.grid, s.S, s.c, s.W, F, data, normalize_weight=normalize)
    b = solve_linearized(s.grid, s.S, s.c, 1e3 * s.W, F, data, normalize_weight=normalize)
    assert np.abs(a - b).max() / np.abs(a).max() < 1e-10


def test_tikhonov_term_shrinks_solution(small_setup):
    s = small_setup
    F, data = random_problem(s, 5)
    plain = QRMSolver(s.grid, s.S, s.c, s.W)
    reg = QRMSolver(s.grid, s.S, s.c, s.W, eps=1e6)
    inner = plain.elim.inner_nodes
    a = plain.solve(F, data).reshape(4, -1)[:, inner]
    b = reg.solve(F, data).reshape(4, -1)[:, inner]
    assert np.linalg.norm(b) < np.linalg.norm(a)
    assert reg.optimality_defect(reg.solve(F, data), F) < 1e-8


def test_invalid_inputs(small_setup):
    s = small_setup
    F, data = random_problem(s)
    with pytest.raises(ValueError):
        QRMSolver(s.grid, s.S, s.c, -s.W)
    with pytest.raises(ValueError):
        QRMSolver(s.grid, s.S, s.c[:-1], s.W)
    with pytest.raises(ValueError):
        QRMSolver(s.grid, s.S, s.c, s.W, eps=-1.0)
    with pytest.raises(ValueError):
        QRMSolver(s.grid, s.S, s.c, s.W, neumann_order=3)
    with pytest.raises(ValueError):
        QRMSolver(s.grid, s.S, s.c, s.W, method="lsqr")
    solver = QRMSolver(s.grid, s.S, s.c, s.W)
    with pytest.raises(ValueError):
        solver.solve(F[:3], data)
    bad = BoundaryData(s.grid, data.G.copy(), data.Q.copy())
    bad.G[0, 0] = np.nan
    with pytest.raises(ValueError):
        solver.solve(F, bad)


# ---------------------------------------------------------- projected F

def test_rhs_of_zero_nonlinearity(small_setup):
    s = small_setup
    U = smooth_modes(s.grid, 4)
    assert np.all(nonlinear_rhs(U, s.basis, ZERO, s.grid) == 0)


def test_rhs_of_identity_is_first_mode(small_setup):
    s = small_setup
    U = np.zeros((4, 14, 14))
    U[0] = smooth_modes(s.grid, 1)[0]
    F = Nonlinearity(lambda x, y, t, v, p1, p2: v, "identity")
    out = nonlinear_rhs(U, s.basis, F, s.grid)
    np.testing.assert_allclose(out[0], U[0, 1:-1, 1:-1], atol=1e-12)
    np.testing.assert_allclose(out[1:], 0.0, atol=1e-12)


@pytest.mark.parametrize("f, tol", [
    (lambda x, y, t, v, p1, p2: v * (1 - v) + np.sin(p1) * p2 + x * t, 1e-7),
    # the Test 2 form; |p1| has kinks in t
    (lambda x, y, t, v, p1, p2: v * (1 - v) + 0.5 * (np.abs(p1) - np.abs(p2)), 1e-6),
])
def test_rhs_matches_fine_time_oracle(f, tol):
    s = Setup(8, 4)
    U = 0.3 * smooth_modes(s.grid, 4)
    F = Nonlinearity(f, "f")
    got = nonlinear_rhs(U, s.basis, F, s.grid)
    ref = projected_rhs_loops(U, s.basis, F, list(s.grid.xs), s.grid.h, n_fine=80000)
    assert np.abs(got - ref).max() < tol * np.abs(ref).max()


def test_rhs_rejects_bad_input(small_setup):
    s = small_setup
    F = Nonlinearity(lambda x, y, t, v, p1, p2: 1.0 / (v - v), "nan")
    with np.errstate(all="ignore"), pytest.raises(ValueError, match="non-finite F"):
        nonlinear_rhs(np.ones((4, 14, 14)), s.basis, F, s.grid)
    with pytest.raises(ValueError):
        nonlinear_rhs(np.ones((3, 14, 14)), s.basis, F, s.grid)


def test_residual_dump(small_setup, tmp_path):
    s = small_setup
    F, data = random_problem(s, 6)
    solver = QRMSolver(s.grid, s.S, s.c, s.W)
    V = solver.solve(F, data)
    write_residual_csv(tmp_path / "res.csv", solver, V, F)
    header = open(tmp_path / "res.csv").readline().strip().split(",")
    assert header == ["x", "y", "r1", "r2", "r3", "r4"]
    table = np.loadtxt(tmp_path / "res.csv", delimiter=",", skiprows=1)
    assert table.shape == (12 * 12, 6)
    np.testing.assert_allclose(table[:, 2:].T.reshape(4, 12, 12), solver.residual(V, F))
    assert table[0, 0] == pytest.approx(s.grid.xs[1])
