import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from carleman_isp.errors import ConfigError, GridAlignmentError, StabilityError
from carleman_isp.forward import (ForwardConfig, Nonlinearity, ZERO, add_noise, extract_traces,
                                  multiplicative_noise, peaks, peaks_coefficient, read_traces_csv,
                                  solve_forward, truncation_factor, write_traces_csv)
from carleman_isp.grid import aligned_outer_radius, build_grid, normal_trace
from carleman_isp.projection import project_field
from carleman_isp.time_basis import build_basis


def nested_grids(Nx, R_outer):
    inner = build_grid(1.0, Nx)
    R = aligned_outer_radius(1.0, Nx, R_outer)
    return inner, build_grid(R, int(round(2 * R / inner.h)) + 1)


def eigenmode(outer, k, l):
    X, Y = outer.mesh()
    R = outer.R
    a, b = k * np.pi / (2 * R), l * np.pi / (2 * R)
    return np.sin(a * (X + R)) * np.sin(b * (Y + R)), a * a + b * b


def eigen_error(Nx, T=1.5, k=3, l=2):
    inner, outer = nested_grids(Nx, 6.0)
    p, rate = eigenmode(outer, k, l)
    cfg = ForwardConfig(outer, inner, T, np.ones(outer.shape), p, n_t_out=8, check_support=False)
    sol = solve_forward(cfg)
    exact = p * np.exp(-rate * T)
    return np.abs(sol.final - exact).max() / np.abs(exact).max(), sol


def test_peaks_value_and_range():
    # c(0, 0) = 1 + (3/e - 1/(3e)) / 50 = 1 + 8 / (150 e)
    assert peaks(0.0, 0.0) == pytest.approx(1 + 8 / (150 * np.e), rel=1e-14)
    xs = np.linspace(-3, 3, 1201)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    c = peaks(X, Y)
    assert c.min() == pytest.approx(0.8693, abs=2e-3)
    assert c.max() == pytest.approx(1.1618, abs=2e-3)


def test_eigenmode_decay_and_convergence():
    coarse, sol = eigen_error(40)
    fine, _ = eigen_error(79)
    assert sol.outer.Nx == 236
    assert coarse < 0.01
    assert 3.0 < coarse / fine < 5.0


def test_streamed_projection_matches_sampled():
    inner, outer = nested_grids(12, 1.6)
    p, _ = eigenmode(outer, 1, 1)
    basis = build_basis(6, 1.0)
    cfg = ForwardConfig(outer, inner, 1.0, np.ones(outer.shape), p, n_t_out=256, check_support=False)
    sol = solve_forward(cfg, project_onto=basis)
    # with a smooth time history, the subsampled Simpson projection is accurate too
    sampled = project_field(sol.window, sol.times, basis)
    np.testing.assert_allclose(sol.coefficients, sampled, atol=1e-6 * np.abs(sampled).max())
    assert sol.inner_coefficients().shape == (6, 12, 12)


def test_traces_of_eigenmode():
    inner, outer = nested_grids(20, 2.0)
    p, _ = eigenmode(outer, 1, 1)
    cfg = ForwardConfig(outer, inner, 0.1, np.ones(outer.shape), p, n_t_out=4, check_support=False)
    traces = extract_traces(solve_forward(cfg), inner)
    assert traces.g.shape == (inner.boundary_idx.size, 5)
    k = (outer.Nx - inner.Nx) // 2
    np.testing.assert_allclose(traces.g[:, 0], inner.boundary_values(p[k:k + 20, k:k + 20]))
    np.testing.assert_allclose(traces.q[:, 0], normal_trace(p, outer, inner))
    with pytest.raises(GridAlignmentError):
        extract_traces(solve_forward(cfg), build_grid(1.0, 21))


def test_nonlinear_source_changes_solution():
    inner, outer = nested_grids(12, 1.6)
    X, Y = outer.mesh()
    p = np.where(X**2 + Y**2 < 0.25, 1.0, 0.0)
    c = peaks_coefficient(outer)
    lin = solve_forward(ForwardConfig(outer, inner, 0.2, c, p, ZERO, n_t_out=4))
    src = Nonlinearity(lambda x, y, t, s, p1, p2: np.ones_like(s), "one")
    non = solve_forward(ForwardConfig(outer, inner, 0.2, c, p, src, n_t_out=4))
    assert non.final[outer.Nx // 2, outer.Nx // 2] > lin.final[outer.Nx // 2, outer.Nx // 2]


def test_explicit_step_too_large():
    inner, outer = nested_grids(12, 1.6)
    limit = outer.h**2 / 4
    cfg = ForwardConfig(outer, inner, 0.1, np.ones(outer.shape), np.zeros(outer.shape),
                        dt=1.5 * limit, n_t_out=4)
    with pytest.raises(StabilityError):
        solve_forward(cfg)


def test_blow_up_is_reported():
    inner, outer = nested_grids(12, 1.6)
    X, Y = outer.mesh()
    p = np.where(X**2 + Y**2 < 0.25, 1.0, 0.0)
    boom = Nonlinearity(lambda x, y, t, s, p1, p2: 1e200 * (1 + s**4), "boom")
    with np.errstate(all="ignore"), pytest.raises(StabilityError, match="step"):
        solve_forward(ForwardConfig(outer, inner, 0.5, np.ones(outer.shape), p, boom, n_t_out=4),
                      check_every=5)


@pytest.mark.parametrize("field, value", [("c", 0.0), ("c", np.nan), ("p", np.inf)])
def test_invalid_inputs(field, value):
    inner, outer = nested_grids(12, 1.6)
    arrays = {"c": np.ones(outer.shape), "p": np.zeros(outer.shape)}
    arrays[field][3, 3] = value
    with pytest.raises(ConfigError):
        solve_forward(ForwardConfig(outer, inner, 0.1, arrays["c"], arrays["p"], n_t_out=4))


def test_source_outside_inner_domain_rejected():
    inner, outer = nested_grids(12, 1.6)
    p = np.zeros(outer.shape)
    p[1, 1] = 1.0
    with pytest.raises(ConfigError):
        solve_forward(ForwardConfig(outer, inner, 0.1, np.ones(outer.shape), p, n_t_out=4))
    with pytest.raises(ConfigError):
        solve_forward(ForwardConfig(outer, inner, 0.1, np.ones(outer.shape), p * 0, n_t_out=3))


def test_noise_bounds_and_determinism():
    clean = np.linspace(1.0, 2.0, 20000)
    noisy = multiplicative_noise(clean, 0.2, np.random.default_rng(3))
    rel = noisy / clean - 1
    assert np.abs(rel).max() <= 0.2
    assert np.abs(rel).max() > 0.199
    again = multiplicative_noise(clean, 0.2, np.random.default_rng(3))
    np.testing.assert_array_equal(noisy, again)
    np.testing.assert_array_equal(multiplicative_noise(clean, 0.0, np.random.default_rng(0)), clean)


def test_add_noise_on_traces(tmp_path):
    inner, outer = nested_grids(10, 1.6)
    X, Y = outer.mesh()
    p = np.where(X**2 + Y**2 < 0.25, 1.0, 0.0)
    traces = extract_traces(solve_forward(ForwardConfig(outer, inner, 0.2, np.ones(outer.shape), p,
                                                        n_t_out=4)))
    noisy = add_noise(traces, 0.1, seed=5)
    assert noisy.delta == 0.1 and noisy.seed == 5
    with pytest.raises(ValueError):
        add_noise(traces, -0.1)
    write_traces_csv(noisy, tmp_path / "traces.csv")
    assert open(tmp_path / "traces.csv").readline().strip() == "face,node_x,node_y,t,g,q"
    back = read_traces_csv(tmp_path / "traces.csv", inner)
    np.testing.assert_array_equal(back.g, noisy.g)
    np.testing.assert_array_equal(back.q, noisy.q)


@settings(max_examples=50, deadline=None)
@given(z=st.floats(0.0, 10.0), bound=st.floats(0.1, 5.0))
def test_truncation_factor_property(z, bound):
    chi = float(truncation_factor(z, 0.0, 0.0, bound))
    assert 0.0 <= chi <= 1.0
    if z <= bound:
        assert chi == 1.0
    if z >= 2 * bound:
        assert chi == 0.0
    assert float(truncation_factor(z + 0.1, 0.0, 0.0, bound)) <= chi + 1e-15


def test_truncated_nonlinearity():
    F = Nonlinearity(lambda x, y, t, s, p1, p2: s + 1.0, "affine").truncated(M=1.0, T=4.0)
    assert F.bound == 2.0
    assert F(0, 0, 0, 1.0, 0.0, 0.0) == pytest.approx(2.0)
    assert F(0, 0, 0, 5.0, 0.0, 0.0) == 0.0


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_linear_scheme_max_principle(seed):
    # with F = 0 the explicit update is a convex combination of neighbours
    inner, outer = nested_grids(8, 1.6)
    p = np.zeros(outer.shape)
    k = (outer.Nx - inner.Nx) // 2
    p[k + 1:k + 7, k + 1:k + 7] = np.random.default_rng(seed).uniform(-1, 1, (6, 6))
    c = peaks_coefficient(outer)
    previous = np.abs(p).max()
    for T in (0.01, 0.05, 0.2):
        sol = solve_forward(ForwardConfig(outer, inner, T, c, p, n_t_out=4))
        assert np.abs(sol.final).max() <= previous + 1e-15
        previous = np.abs(sol.final).max()
        assert np.all(sol.final[[0, -1], :] == 0) and np.all(sol.final[:, [0, -1]] == 0)
