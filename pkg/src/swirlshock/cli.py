"""Command line interface: ``swirlshock <subcommand> [options]``.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .background import SUBSONIC, SUPERSONIC, BackgroundError
from .gas import GasDomainError
from .harness import io
from .harness.config import ConfigError, default_config, load_config
from .harness.pipeline import (ReconstructionError, build_perturbation, build_supersonic,
                               run_background, solve_case)
from .harness.sweep import PARAMETERS, analyze, parse_values, sweep, write_sweep
from .harness.verify import bundle_tables, load_tables, verify_tables, write_tables
from .lagrangian import ChartError, build_chart
from .shock_rh import CoefficientError, DegenerateShockError, JumpSolveError
from .subsonic_iter import SubsonicIterationError
from .supersonic import StepSizeError, SupersonicBreakdownError, straight_wall_report, validate_inlet

log = logging.getLogger("swirlshock")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3

SOLVER_ERRORS = (BackgroundError, SupersonicBreakdownError, StepSizeError, ChartError,
                 JumpSolveError, DegenerateShockError, CoefficientError,
                 SubsonicIterationError, ReconstructionError, GasDomainError)


class UsageError(ValueError):
    pass


def _global_options(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=default, help="TOML case file")
    parser.add_argument("--out-dir", type=Path, default=default if suppress else Path("."),
                        help="directory for output files")
    parser.add_argument("--log-level", default=default if suppress else "WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swirlshock",
                                description="Transonic shocks with swirl in a conic nozzle.")
    _global_options(p, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("background", parents=[common], help="radial background transonic shock")
    s.add_argument("--pe", type=float, help="exit pressure (overrides the config)")
    s.add_argument("--out", type=Path, help="CSV path (default <out-dir>/background.csv)")
    s.add_argument("--points", type=int, default=201, help="samples per branch")

    s = sub.add_parser("supersonic", parents=[common], help="march the perturbed supersonic flow")
    s.add_argument("--out", type=Path, help="CSV path (default <out-dir>/supersonic.csv)")

    s = sub.add_parser("solve", parents=[common], help="full free-boundary solve")
    _case_options(s)

    s = sub.add_parser("verify", parents=[common], help="diagnostics report for a case")
    _case_options(s)
    s.add_argument("--from-dir", type=Path,
                   help="recompute the report from the tables of a previous solve")
    s.add_argument("--level", choices=["basic", "full"], default=None)
    s.add_argument("--dump-chart", action="store_true",
                   help="also write the supersonic Lagrangian chart tables")

    s = sub.add_parser("sweep", parents=[common], help="run independent cases over a parameter")
    s.add_argument("--parameter", choices=PARAMETERS, required=True)
    s.add_argument("--values", required=True, help="comma separated values (grid: n for n x n)")
    s.add_argument("--workers", type=int, default=None)
    _case_options(s)
    return p


def _case_options(s):
    s.add_argument("--epsilon", type=float)
    s.add_argument("--grid", help="n1xn2, e.g. 64x64")
    s.add_argument("--max-iter", type=int)
    s.add_argument("--tol", type=float)


def _parse_grid(text):
    try:
        n1, n2 = (int(t) for t in text.lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"--grid expects <n1>x<n2>, got {text!r}") from exc
    return n1, n2


def _config(args):
    cfg = load_config(args.config) if args.config is not None else default_config()
    pert, num, geo = {}, {}, {}
    if getattr(args, "epsilon", None) is not None:
        pert["epsilon"] = args.epsilon
    if getattr(args, "grid", None):
        num["n1"], num["n2"] = _parse_grid(args.grid)
    if getattr(args, "max_iter", None) is not None:
        num["max_iter"] = args.max_iter
    if getattr(args, "tol", None) is not None:
        num["tol"] = args.tol
    if getattr(args, "pe", None) is not None:
        geo["exit_pressure"] = args.pe
    updates = {k: v for k, v in (("perturbation", pert), ("numerics", num), ("geometry", geo)) if v}
    return cfg.with_updates(**updates) if updates else cfg


def cmd_background(args) -> int:
    cfg = _config(args)
    bg = run_background(cfg)
    g = bg.gas
    rows = []
    for branch, lo, hi in ((SUPERSONIC, bg.r1, bg.r_b), (SUBSONIC, bg.r_b, bg.r2)):
        r = np.linspace(lo, hi, args.points)
        U, rho, P, c2 = bg.profile(r, branch)
        for k in range(r.size):
            rows.append([r[k], branch, U[k], rho[k], P[k], U[k] / np.sqrt(c2[k])])
    out = args.out or args.out_dir / "background.csv"
    io.write_csv(out, ["r", "branch", "U", "rho", "P", "Mach"], rows)
    rng = bg.pressure_range
    io.write_json(args.out_dir / "background.json", {
        "r_b": bg.r_b, "P1": rng.P1, "P2": rng.P2, "exit_pressure": bg.P_e, "m": bg.m,
        "B": bg.B, "S_minus": bg.S_minus, "S_plus": bg.S_plus,
        "shooting_iterations": bg.shooting_iterations, "gamma": g.gamma})
    print(f"r_b={io.format_value(bg.r_b)} P1={io.format_value(rng.P1)} P2={io.format_value(rng.P2)}")
    return EXIT_OK


def cmd_supersonic(args) -> int:
    cfg = _config(args)
    bg = run_background(cfg)
    pert = build_perturbation(cfg)
    report = {"inlet": validate_inlet(pert, cfg.geometry.theta0, cfg.geometry.r1)}
    if cfg.straight_wall:
        report["straight_wall"] = straight_wall_report(pert, cfg.geometry.theta0)
    fld, _, _ = build_supersonic(cfg, bg, pert)
    th = fld.theta_grid()
    mach = fld.mach()
    header = ["r", "theta", "U1", "U2", "U3", "P", "S", "Mach"]
    rows = []
    for i, r in enumerate(fld.r):
        for j in range(fld.sigma.size):
            rows.append([r, th[i, j], *fld.values[i, :, j], mach[i, j]])
    io.write_csv(args.out or args.out_dir / "supersonic.csv", header, rows)
    report["min_mach"] = float(np.min(mach))
    if cfg.epsilon > 0.0:
        chart = build_chart(fld)
        report["total_flux_M"] = chart.M
        report["jacobian_min"] = float(np.min(chart.jacobian()))
    io.write_json(args.out_dir / "supersonic.json", report)
    bad = [k for k, v in report["inlet"].items() if not v["passed"]]
    if bad:
        log.warning("inlet compatibility violated: %s", ", ".join(bad))
    print(f"march: {fld.r.size} radii x {fld.sigma.size} angles, min Mach {report['min_mach']:.6g}")
    return EXIT_OK


def _solve(args):
    cfg = _config(args)
    t = time.perf_counter()
    bundle = solve_case(cfg)
    elapsed = time.perf_counter() - t
    tables, meta = bundle_tables(bundle)
    write_tables(args.out_dir, tables, meta)
    # wall-clock data kept apart so the other outputs are reproducible
    io.write_json(args.out_dir / "timings.json", {**bundle.timings, "total": elapsed})
    rep = bundle.report
    print(f"converged in {rep.iterations} iterations: norm {rep.norms[-1]:.6e}, "
          f"r_b {bundle.background.r_b:.12g}, W6(M) {bundle.state.W6M:.6e}")
    return cfg, bundle, tables, meta


def cmd_solve(args) -> int:
    _solve(args)
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.from_dir is not None:
        tables, meta = load_tables(args.from_dir)
        level = args.level or "basic"
        bundle = None
    else:
        cfg, bundle, tables, meta = _solve(args)
        level = args.level or cfg.numerics["diagnostics"]
    report = verify_tables(tables, meta, level)
    io.write_json(args.out_dir / "verify.json", report)
    for name, c in report["checks"].items():
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name}: {c['value']:.3e} (tol {c['tolerance']:.3e})")
    if args.dump_chart:
        if bundle is None or bundle.chart is None:
            log.warning("--dump-chart needs a fresh solve with epsilon > 0; nothing written")
        else:
            _dump_chart(bundle.chart, args.out_dir)
    print("all checks passed" if report["passed"] else "some checks failed")
    return EXIT_OK


def _dump_chart(chart, out_dir):
    f = chart.field
    R, Sg = np.meshgrid(f.r, f.sigma, indexing="ij")
    io.write_columns(out_dir / "chart_y2.csv", {
        "r": R.ravel(), "sigma": Sg.ravel(), "theta": f.theta_grid().ravel(),
        "y2": chart.y2_table.ravel(), "jacobian": chart.jacobian().ravel()})
    r, y2, th = chart.inverse_table()
    R, Y = np.meshgrid(r, y2, indexing="ij")
    io.write_columns(out_dir / "chart_inverse.csv",
                     {"y1": R.ravel(), "y2": Y.ravel(), "theta": th.ravel()})


def cmd_sweep(args) -> int:
    cfg = _config(args)
    try:
        values = parse_values(args.parameter, args.values)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    workers = args.workers if args.workers is not None else int(cfg.numerics["workers"])
    rows = sweep(cfg, args.parameter, values, workers=workers)
    write_sweep(args.out_dir / "sweep.csv", rows)
    summary = analyze(args.parameter, rows)
    io.write_json(args.out_dir / "sweep.json", summary)
    for r in rows:
        if r["status"] == "ok":
            print(f"{args.parameter}={r['value']}: norm {r['norm']:.6e}, ratio {r['first_ratio']:.4f}, "
                  f"RH {r['rh_residual']:.3e}, r_b {r['r_b']:.10g}")
        else:
            print(f"{args.parameter}={r['value']}: FAILED {r['error']}")
    return EXIT_OK


COMMANDS = {"background": cmd_background, "supersonic": cmd_supersonic, "solve": cmd_solve,
            "verify": cmd_verify, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
