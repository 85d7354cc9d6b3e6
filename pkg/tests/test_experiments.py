import filecmp
from dataclasses import replace

import numpy as np
import pytest

from carleman_isp import experiments as ex
from carleman_isp.errors import ConfigError

TINY = ex.ExperimentConfig(R_outer=2.0, Nx=20, N=8, n_t_out=64, K_max=4)

TINY_INI = """
[grid]
R_outer = 2.0
Nx = 20
n_t_out = 64
[basis]
N = 8
[iteration]
K_max = 4
[test]
preset = desk
"""


def test_load_config_and_roundtrip(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text(TINY_INI)
    cfg = ex.load_config(path)
    assert cfg == replace(ex.DESK, R_outer=2.0, Nx=20, n_t_out=64, N=8, K_max=4)
    ex.write_config(cfg, tmp_path / "copy.ini")
    assert ex.load_config(tmp_path / "copy.ini") == cfg


@pytest.mark.parametrize("text", [
    "[grid]\nNx = 40\n[bogus]\nx = 1\n",
    "[grid]\nnx = 40\n",
    "[grid]\nNx = forty\n",
    "[noise]\ndelta = 1.5\n",
    "[test]\ntest = test9\n",
    "[test]\npreset = huge\n",
    "[test]\ntest = custom\nsource = ring\n",
    "[carleman]\nx0 = 0 -1.2\n",
    "[basis]\nN = 80\n[grid]\nn_t_out = 128\n",
    "[solver]\neps = 0.5\n",
    "not an ini file",
])
def test_bad_configs_rejected(tmp_path, text):
    path = tmp_path / "bad.ini"
    path.write_text(text)
    with pytest.raises(ConfigError):
        ex.load_config(path)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        ex.load_config(tmp_path / "nope.ini")


def test_reference_grids():
    assert ex.PAPER.outer_grid().Nx == 476
    assert ex.DESK.outer_grid().Nx == 236
    assert ex.PAPER.outer_grid().R == pytest.approx(1 + 198 * 2 / 79)


@pytest.mark.parametrize("name", sorted(ex.TESTS))
def test_sources_inside_inner_square(name):
    cfg = replace(ex.DESK, test=name)
    fc = ex.forward_config(cfg)
    fc.validate()
    X, Y = fc.outer.mesh()
    assert np.all(np.abs(X[fc.p != 0]) < 1) and np.all(np.abs(Y[fc.p != 0]) < 1)
    assert set(np.unique(fc.p)) == {0.0} | {inc.contrast for inc in ex.TESTS[name].inclusions}


def test_summarize_exact_source():
    case = ex.TESTS["test3"]
    grid = ex.DESK.inner_grid()
    rows = ex.summarize(case, grid, case.source(grid))
    assert rows[0]["region"] == "ring" and rows[0]["rel_error"] == 0.0
    assert rows[0]["reference_rel_error"] == pytest.approx(0.0774)
    assert rows[1]["region"] == "void_mean" and rows[1]["computed_max"] == 0.0


def test_custom_case():
    cfg = replace(TINY, test="custom", source="disks", nonlinearity="linear").validate()
    case = cfg.case()
    assert len(case.inclusions) == 3 and case.F.name == "linear"


def test_run_test_is_deterministic(tmp_path):
    ex.clear_caches()
    cfg = replace(TINY, dump_iterations=True)
    a = ex.run_test(cfg, tmp_path / "a")
    ex.clear_caches()
    ex.run_test(cfg, tmp_path / "b")
    names = ["p_true.csv", "p_comp.csv", "report.csv", "summary.csv", "p_iter_1.csv"]
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert match == names, (mismatch, errors)
    assert a.report.K <= cfg.K_max and len(a.report.sources) == a.report.K
    assert np.all(np.isfinite(a.p_comp))


def test_noise_seed_changes_data_only():
    sol = ex.simulate(TINY)
    basis = ex.get_basis(TINY.N, TINY.T)
    d0 = ex.boundary_data(TINY, sol, basis, seed=0)
    d1 = ex.boundary_data(TINY, sol, basis, seed=1)
    clean = ex.boundary_data(replace(TINY, delta=0.0), sol, basis)
    assert not np.array_equal(d0.G, d1.G)
    assert np.all(np.abs(d0.G - clean.G) <= 0.2 * np.abs(clean.G) + 1e-15)


def test_sampled_projection_route():
    cfg = replace(TINY, projection="sampled")
    sol = ex.simulate(cfg)
    assert sol.coefficients is None
    data = ex.boundary_data(cfg, sol, ex.get_basis(8, cfg.T))
    stream = ex.boundary_data(TINY, ex.simulate(TINY), ex.get_basis(8, cfg.T))
    assert data.G.shape == stream.G.shape
    with pytest.raises(ValueError):
        ex.boundary_data(TINY, sol, ex.get_basis(8, cfg.T))


def test_cutoff_quadrature_converged():
    coarse = ex.choose_cutoff(TINY, [4, 8])
    fine = ex.choose_cutoff(TINY, [4, 8], n_quad=512)
    for N in (4, 8):
        assert abs(coarse[N][0] - fine[N][0]) < 1e-8
        assert coarse[N][1].shape == (20, 20)
    with pytest.raises(ValueError):
        ex.choose_cutoff(TINY, [])


def test_random_initial_guess_bounded():
    U0 = ex.random_initial_guess(TINY, seed=3, scale=2.0)
    assert U0.shape == (8, 20, 20) and np.abs(U0).max() <= 2.0
    np.testing.assert_array_equal(U0, ex.random_initial_guess(TINY, seed=3, scale=2.0))


def test_noise_on_raw_traces():
    cfg = replace(TINY, projection="sampled", noise_on="traces").validate()
    sol = ex.simulate(cfg)
    basis = ex.get_basis(cfg.N, cfg.T)
    a = ex.boundary_data(cfg, sol, basis, seed=2)
    b = ex.boundary_data(replace(cfg, noise_on="projected"), sol, basis, seed=2)
    assert a.G.shape == b.G.shape and not np.allclose(a.G, b.G)
    with pytest.raises(ConfigError):
        replace(TINY, noise_on="traces").validate()     # needs the sampled route
    with pytest.raises(ConfigError):
        replace(TINY, noise_on="nowhere").validate()
