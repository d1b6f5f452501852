"""Parameter sweeps over independent cases (epsilon, grid size or exit pressure)."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import io
from .config import CaseConfig, ConfigError
from .pipeline import solve_case
from .verify import bundle_tables, rh_residual

log = logging.getLogger(__name__)

PARAMETERS = ("epsilon", "grid", "P_e")

COLUMNS = ("parameter", "value", "status", "r_b", "norm", "norm_over_value", "iterations",
           "first_ratio", "asymptotic_ratio", "rh_residual", "nonlinear_residual", "W6M",
           "error", "runtime_s")


def case_config(base: CaseConfig, parameter: str, value) -> CaseConfig:
    if parameter == "epsilon":
        return base.with_updates(perturbation={"epsilon": float(value)})
    if parameter == "grid":
        n = int(value)
        return base.with_updates(numerics={"n1": n, "n2": n})
    if parameter == "P_e":
        return base.with_updates(geometry={"exit_pressure": float(value)})
    raise ValueError(f"unknown sweep parameter {parameter!r}; expected one of {PARAMETERS}")


def run_case(base: CaseConfig, parameter: str, value) -> dict:
    """One sweep row; failures are recorded instead of raised."""
    row = dict.fromkeys(COLUMNS, None)
    row.update(parameter=parameter, value=value, status="ok", error="")
    t = time.perf_counter()
    try:
        cfg = case_config(base, parameter, value)
        b = solve_case(cfg, reconstruct=False)
        tables, meta = bundle_tables(b)
        rep = b.report
        row.update(
            r_b=b.background.r_b, norm=rep.norms[-1],
            norm_over_value=rep.norms[-1] / float(value) if parameter == "epsilon" and value else None,
            iterations=rep.iterations, first_ratio=meta["first_ratio"],
            asymptotic_ratio=meta["asymptotic_ratio"],
            rh_residual=float(np.max(rh_residual(tables, meta))),
            nonlinear_residual=rep.residuals[-1], W6M=b.state.W6M)
    except (ConfigError, RuntimeError, ValueError, ArithmeticError) as exc:
        log.warning("sweep case %s=%s failed: %s", parameter, value, exc)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    row["runtime_s"] = time.perf_counter() - t
    return row


def _run(args):
    return run_case(*args)


def sweep(base: CaseConfig, parameter: str, values, workers: int = 1) -> list[dict]:
    """Rows in the order of ``values``, whatever order the cases finish in."""
    if parameter not in PARAMETERS:
        raise ValueError(f"unknown sweep parameter {parameter!r}; expected one of {PARAMETERS}")
    jobs = [(base, parameter, v) for v in values]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run, jobs))
    return [_run(j) for j in jobs]


def write_sweep(path, rows):
    return io.write_csv(path, COLUMNS, ([r[c] for c in COLUMNS] for r in rows))


def analyze(parameter: str, rows) -> dict:
    """Summary statistics matching the purpose of each sweep."""
    ok = [r for r in rows if r["status"] == "ok"]
    out = {"parameter": parameter, "cases": len(rows), "passed": len(ok)}
    if parameter == "epsilon" and ok:
        eps = np.array([float(r["value"]) for r in ok])
        nrm = np.array([r["norm"] for r in ok])
        # least-squares slope of norm = K eps through the origin
        K = float(eps @ nrm / (eps @ eps))
        out["K"] = K
        out["max_relative_deviation"] = float(np.max(np.abs(nrm - K * eps) / (K * eps)))
        ratios = np.array([r["first_ratio"] for r in ok])
        out["first_ratios"] = ratios.tolist()
    elif parameter == "grid" and len(ok) > 1:
        n = np.array([float(r["value"]) for r in ok])
        res = np.array([r["rh_residual"] for r in ok])
        out["rh_orders"] = (np.log(res[:-1] / res[1:]) / np.log(n[1:] / n[:-1])).tolist()
    elif parameter == "P_e" and len(ok) > 1:
        pe = np.array([float(r["value"]) for r in ok])
        rb = np.array([r["r_b"] for r in ok])
        order = np.argsort(pe)
        out["r_b_strictly_decreasing"] = bool(np.all(np.diff(rb[order]) < 0.0))
    return out


def parse_values(parameter: str, text: str):
    """Comma or whitespace separated values; grids are integers."""
    items = [t for t in text.replace(",", " ").split() if t]
    if not items:
        raise ValueError("no sweep values given")
    conv = int if parameter == "grid" else float
    vals = [conv(t) for t in items]
    if parameter != "grid" and not all(math.isfinite(v) for v in vals):
        raise ValueError("sweep values must be finite")
    return vals
