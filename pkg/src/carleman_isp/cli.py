"""Command-line entry point ``isp``.

Subcommands::

    isp simulate --config run.ini        forward data (traces and projected G, Q)
    isp reconstruct --config run.ini     full reconstruction for one test
    isp paper-tests --scale desk         Tests 1-3 plus the cut-off table
    isp basis-check --N 40               basis structure and S
    isp carleman-diag --config run.ini   weighted-estimate diagnostic

Exit status is 0 on success and the error category code otherwise.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiments as ex
from .carleman import bump_field, carleman_diagnostic, write_diagnostic_csv
from .errors import IspError
from .forward import extract_traces, write_traces_csv
from .projection import project_boundary, write_boundary_csv
from .time_basis import build_basis, stiffness_matrix, write_basis_csv, write_stiffness_csv

log = logging.getLogger("carleman_isp")

DIAG_LAMBDAS = (10.0, 20.0, 40.0, 80.0)


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = ex.load_config(args.config)
    out = _out_dir(args.output or Path(cfg.output) / "simulate")
    sol = ex.simulate(cfg)
    traces = extract_traces(sol, cfg.inner_grid())
    write_traces_csv(traces, out / "traces.csv")
    basis = ex.get_basis(cfg.N, cfg.T, cfg.n_quad)
    data = project_boundary(traces, basis, cfg.delta, cfg.seed)
    write_boundary_csv(data, out / "boundary_data.csv")
    print(f"forward: {sol.n_steps} steps of {sol.dt:.4g} on {sol.outer.Nx}^2 nodes -> {out}")
    return 0


def _print_summary(name, rec) -> None:
    rep = rec.report
    theta = "n/a" if rep.theta_hat is None else f"{rep.theta_hat:.3f}"
    print(f"{name}: K={rep.K} ({rep.stop_reason}), theta_hat={theta}")
    for row in rec.summary:
        print(f"  {row['region']:<12} true={row['true']:<6g} computed={row['computed_max']:.4f} "
              f"rel_err={row['rel_error']:.4f}")


def cmd_reconstruct(args) -> int:
    cfg = ex.load_config(args.config)
    out = args.output or Path(cfg.output) / cfg.case().name
    rec = ex.run_test(cfg, out)
    _print_summary(cfg.case().name, rec)
    return 0


def cmd_paper_tests(args) -> int:
    cfg = ex.PRESETS[args.scale]
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    root = _out_dir(args.output)
    for name in args.tests:
        t0 = time.perf_counter()
        rec = ex.run_test(replace(cfg, test=name), root / name)
        _print_summary(name, rec)
        print(f"  ({time.perf_counter() - t0:.0f} s)")
    N_list = (10, 20, 25) if args.scale == "desk" else (15, 35, 40)
    table = ex.choose_cutoff(cfg, N_list)
    ex.write_cutoff_csv(table, root / "cutoff.csv")
    print("cut-off: " + ", ".join(f"|e_{N}|={v[0]:.4f}" for N, v in sorted(table.items())))
    return 0


def cmd_basis_check(args) -> int:
    basis = build_basis(args.N, args.T)
    stiff = stiffness_matrix(basis)
    S = stiff.S
    defect = float(np.max(np.abs(basis.gram() - np.eye(args.N))))
    diag = float(np.max(np.abs(np.diag(S) - 1.0)))
    lower = float(np.max(np.abs(np.tril(S, -1)))) if args.N > 1 else 0.0
    print(f"N={args.N} T={args.T}: orthonormality defect {defect:.3e}, "
          f"max|s_mm - 1| {diag:.3e}, max|s_mn| (n<m) {lower:.3e}")
    if args.output:
        out = _out_dir(args.output)
        write_basis_csv(basis, out / "basis.csv")
        write_stiffness_csv(stiff, out / "stiffness.csv")
    return 0


def cmd_carleman_diag(args) -> int:
    cfg = ex.load_config(args.config)
    grid = cfg.inner_grid()
    rows = carleman_diagnostic(bump_field(grid), grid, cfg.carleman(), args.lambdas)
    for row in rows:
        print(f"lambda={row['lambda']:<6g} lhs={row['lhs']:.6e} rhs0={row['rhs0']:.6e} "
              f"ratio={row['ratio']:.6e}")
    out = _out_dir(args.output or Path(cfg.output))
    write_diagnostic_csv(rows, out / "carleman_diag.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate boundary data")
    p.add_argument("--config", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="reconstruct the source for one test")
    p.add_argument("--config", required=True)
    p.add_argument("--output")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("paper-tests", help="run the three reference tests and the cut-off table")
    p.add_argument("--scale", choices=sorted(ex.PRESETS), default="desk")
    p.add_argument("--tests", nargs="+", choices=sorted(ex.TESTS), default=sorted(ex.TESTS))
    p.add_argument("--seed", type=int)
    p.add_argument("--output", default="results")
    p.set_defaults(func=cmd_paper_tests)

    p = sub.add_parser("basis-check", help="check orthonormality and the structure of S")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--T", type=float, default=1.5)
    p.add_argument("--output")
    p.set_defaults(func=cmd_basis_check)

    p = sub.add_parser("carleman-diag", help="weighted-estimate diagnostic on a bump field")
    p.add_argument("--config", required=True)
    p.add_argument("--lambdas", type=float, nargs="+", default=list(DIAG_LAMBDAS))
    p.add_argument("--output")
    p.set_defaults(func=cmd_carleman_diag)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except IspError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
