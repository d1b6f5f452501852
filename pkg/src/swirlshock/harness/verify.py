"""Diagnostics of a converged case.

Every check is computed from the flat tables written next to the report
(shock trace, fixed-grid fields, Eulerian grid, summary metadata), so a
report can be recomputed from the output directory alone.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from ..background import SUBSONIC, SUPERSONIC, solve_radial_state
from ..gas import GasConstants, density_from_PS, enthalpy
from ..shock_rh import jump_residuals_full
from ..supersonic import AXIS_PARITY, _system_terms
from . import io
from .pipeline import SolutionBundle, bernoulli_field

FIELDS = ("U1", "U2", "U3", "P", "S")

# tolerance constants: check values are compared against C * h^2 * scale
RH_C = 10.0
AXIS_C = 10.0
WALL_C = 10.0
SWIRL_C = 10.0
STRAIGHT_C = 10.0
INVARIANT_TOL = 1e-12
# round-off in a difference quotient of O(1) data
ROUNDOFF = 1e-13
EULER_FACTOR = 2.0


# ---------------------------------------------------------------------------
# tables


def bundle_tables(b: SolutionBundle) -> tuple[dict, dict]:
    """(tables, meta) describing a solved case; the same content is written to disk."""
    bg = b.background
    g = bg.gas
    dom = b.domain
    W = b.state
    down, up = b.shock_states()
    z2 = dom.z2
    shock = {"j": np.arange(dom.n2), "z2": z2, "theta": b.theta[0], "xi": bg.r_b + W.W6,
             "dxi_dz2": b.shock_slope()}
    for k, name in enumerate(FIELDS):
        shock[name + "_plus"] = down[k]
    for k, name in enumerate(FIELDS):
        shock[name + "_minus"] = up[k]

    states = b.downstream_fields()
    I, J = np.meshgrid(np.arange(dom.n1 + 1), np.arange(dom.n2), indexing="ij")
    lag = {"i": I.ravel(), "j": J.ravel(),
           "z1": np.broadcast_to(dom.z1[:, None], I.shape).ravel(),
           "z2": np.broadcast_to(z2[None, :], I.shape).ravel(),
           "r": W.W6_sharp(dom, bg.r_b).ravel(), "theta": b.theta.ravel()}
    for k, name in enumerate(FIELDS):
        lag[name] = states[k].ravel()
    for k, Wk in enumerate(W.fields):
        lag[f"W{k + 1}"] = Wk.ravel()

    tables = {"shock": shock, "lagrangian": lag}
    ef = b.eulerian
    if ef is not None:
        R, Sg = np.meshgrid(ef.r, ef.sigma, indexing="ij")
        eul = {"r": R.ravel(), "sigma": Sg.ravel(), "theta": ef.theta.ravel(),
               "region": ef.region.ravel(), "z1": ef.z1.ravel(), "z2": ef.z2.ravel()}
        for k, name in enumerate(FIELDS):
            eul[name] = ef.values[k].ravel()
        eul["Mach"] = _mach(ef.values, g).ravel()
        tables["eulerian"] = eul
    rep = b.report
    tables["iterations"] = {"k": np.arange(1, rep.iterations + 1), "norm": rep.norms,
                            "update": rep.updates, "ratio": rep.ratios,
                            "residual": rep.residuals}

    cfg = b.config
    meta = {
        "gas": {"gamma": g.gamma, "A": g.A, "c_v": g.c_v},
        "r1": bg.r1, "r2": bg.r2, "theta0": bg.geometry.theta0, "exit_pressure": bg.P_e,
        "r_b": bg.r_b, "m": bg.m, "B": bg.B, "S_minus": bg.S_minus, "S_plus": bg.S_plus,
        "epsilon": cfg.epsilon, "wall": [float(c) for c in cfg.wall.coef],
        "straight_wall": cfg.straight_wall,
        "N": dom.N, "M": dom.M, "n1": dom.n1, "n2": dom.n2, "h1": dom.h1, "h2": dom.h2,
        "W6M": W.W6M, "norm": rep.norms[-1], "iterations": rep.iterations,
        "converged": rep.converged, "asymptotic_ratio": rep.asymptotic_ratio(),
        "first_ratio": rep.ratios[1] if len(rep.ratios) > 1 else float("nan"),
        "tolerance": rep.tolerance, "trust_radius": rep.trust_radius,
        "condition_estimate": rep.condition_estimate,
        "shock_theta_wall": b.shock.theta_wall if b.shock is not None else float("nan"),
    }
    if ef is not None:
        meta["eulerian_shape"] = [int(ef.r.size), int(ef.sigma.size)]
    if b.chart is not None:
        meta["supersonic_jacobian_min"] = float(np.min(b.chart.jacobian()))
    return tables, meta


# table name -> file name in an output directory
FILES = {"shock": "shock.csv", "lagrangian": "lagrangian.csv", "eulerian": "fields.csv",
         "iterations": "iterations.csv"}
REPORT = "report.json"


def _mach(values, g: GasConstants):
    u1, u2, u3, p, s = values
    rho = density_from_PS(p, s, g)
    return np.sqrt((u1 ** 2 + u2 ** 2 + u3 ** 2) * rho / (g.gamma * p))


def write_tables(out_dir, tables: dict, meta: dict):
    """CSV tables, per-iteration JSON lines and the summary report."""
    out_dir = Path(out_dir)
    paths = {}
    for name, cols in tables.items():
        paths[name] = io.write_columns(out_dir / FILES[name], cols)
    it = tables["iterations"]
    records = [{key: (int(v[i]) if key == "k" else float(v[i])) for key, v in it.items()}
               for i in range(len(it["k"]))]
    paths["convergence"] = io.write_jsonl(out_dir / "convergence.jsonl", records)
    paths["report"] = io.write_json(out_dir / REPORT, meta)
    return paths


def load_tables(out_dir) -> tuple[dict, dict]:
    out_dir = Path(out_dir)
    meta = json.loads((out_dir / REPORT).read_text())
    tables = {}
    for name, fname in FILES.items():
        p = out_dir / fname
        if p.exists():
            tables[name] = io.read_csv(p)
    return tables, meta


# ---------------------------------------------------------------------------
# helpers


def _gas(meta):
    return GasConstants(**meta["gas"])


def _grid(cols, key, shape):
    return np.asarray(cols[key], dtype=float).reshape(shape)


def _lag_grid(tables, meta, key):
    return _grid(tables["lagrangian"], key, (meta["n1"] + 1, meta["n2"]))


def _eul_grid(tables, meta, key):
    return _grid(tables["eulerian"], key, tuple(meta["eulerian_shape"]))


def _states(cols, shape, suffix=""):
    return np.array([_grid(cols, n + suffix, shape) for n in FIELDS])


def _check(value, tol, kind="max"):
    value = float(value)
    ok = (value <= tol) if kind == "max" else (value > tol)
    return {"value": value, "tolerance": float(tol), "passed": bool(ok and math.isfinite(value))}


def _scale(meta):
    """Size used for perturbation-type checks: eps-proportional with a floor."""
    return max(float(meta["epsilon"]), 1e-8)


def wall_slope_derivative(W, h):
    """d/dz2 at the wall face from the last three cell centres."""
    return (2.0 * W[..., -1] - 3.0 * W[..., -2] + W[..., -3]) / h


def profile_wall_derivative(W6, W6M, h):
    return (8.0 / 3.0 * W6M - 3.0 * W6[-1] + W6[-2] / 3.0) / h


# ---------------------------------------------------------------------------
# individual diagnostics


def rh_residual(tables, meta):
    """Sup over the trace of the five scaled jump relations."""
    sh = tables["shock"]
    n = meta["n2"]
    down = _states(sh, (n,), "_plus")
    up = _states(sh, (n,), "_minus")
    res = jump_residuals_full(down, up, np.asarray(sh["xi"]), np.asarray(sh["dxi_dz2"]),
                              np.asarray(sh["z2"]), np.asarray(sh["theta"]), _gas(meta))
    return np.max(np.abs(res), axis=1)


def entropy_margins(tables, meta):
    sh = tables["shock"]
    return (float(np.min(np.asarray(sh["P_plus"]) - np.asarray(sh["P_minus"]))),
            float(np.min(np.asarray(sh["S_plus"]) - np.asarray(sh["S_minus"]))))


def streamline_invariants(tables, meta):
    """Variation along z1 lines of B and S, and of r U3 sin(theta) on the Eulerian grid."""
    g = _gas(meta)
    n1, n2 = meta["n1"] + 1, meta["n2"]
    st = _states(tables["lagrangian"], (n1, n2))
    B = bernoulli_field(st, g)
    sh = tables["shock"]
    Bm = bernoulli_field(_states(sh, (n2,), "_minus"), g)
    out = {"B": float(np.max(np.abs(B - Bm[None, :])) / abs(meta["B"])),
           "S": float(np.max(np.abs(st[4] - st[4][:1])) / max(abs(meta["S_plus"]), 1.0))}
    if "eulerian" in tables:
        reg = _eul_grid(tables, meta, "region") == 1
        r = _eul_grid(tables, meta, "r")[reg]
        th = _eul_grid(tables, meta, "theta")[reg]
        z2 = _eul_grid(tables, meta, "z2")[reg]
        U3 = _eul_grid(tables, meta, "U3")[reg]
        q = np.asarray(sh["xi"]) * np.asarray(sh["U3_minus"]) * np.sin(np.asarray(sh["theta"]))
        zc = np.asarray(sh["z2"])
        # q is even about the axis; its wall value comes from a quadratic fit
        zz = np.concatenate([-zc[1::-1], zc, [meta["M"]]])
        qq = np.concatenate([q[1::-1], q, [(15 * q[-1] - 10 * q[-2] + 3 * q[-3]) / 8.0]])
        ref = CubicSpline(zz, qq)(z2)
        out["rU3sin"] = float(np.max(np.abs(r * U3 * np.sin(th) - ref))) if r.size else 0.0
    return out


def axis_checks(tables, meta):
    n1, n2 = meta["n1"] + 1, meta["n2"]
    h = meta["h2"]
    out = {}
    W2 = _lag_grid(tables, meta, "W2")
    out["W2(axis)"] = float(np.max(np.abs((15 * W2[:, 0] - 10 * W2[:, 1] + 3 * W2[:, 2]) / 8.0)))
    W3 = _lag_grid(tables, meta, "W3")
    out["W3(axis)"] = float(np.max(np.abs((15 * W3[:, 0] - 10 * W3[:, 1] + 3 * W3[:, 2]) / 8.0)))
    for name in ("W1", "W4", "W5"):
        W = _lag_grid(tables, meta, name)
        out[f"d{name}/dz2(axis)"] = float(np.max(np.abs(-2 * W[:, 0] + 3 * W[:, 1] - W[:, 2]) / h))
    xi = np.asarray(tables["shock"]["xi"])
    out["xi'(axis)"] = float(abs(-2 * xi[0] + 3 * xi[1] - xi[2]) / h)
    if "eulerian" in tables:
        out["U2,U3(theta=0)"] = float(max(np.max(np.abs(_eul_grid(tables, meta, "U2")[:, 0])),
                                          np.max(np.abs(_eul_grid(tables, meta, "U3")[:, 0]))))
    return out


def wall_slip(tables, meta):
    """|U2 - r theta_w'(r) U1| on the wall, from the Eulerian wall column."""
    if "eulerian" not in tables:
        return float("nan")
    eps = meta["epsilon"]
    r = _eul_grid(tables, meta, "r")[:, -1]
    f1 = np.polynomial.Polynomial(meta["wall"]).deriv(1)(r - meta["r1"])
    U1 = _eul_grid(tables, meta, "U1")[:, -1]
    U2 = _eul_grid(tables, meta, "U2")[:, -1]
    return float(np.max(np.abs(U2 - eps * r * f1 * U1)))


def jacobian_margins(tables, meta):
    th = _lag_grid(tables, meta, "theta")
    out = {"dtheta/dz2": float(np.min(np.diff(th, axis=1)) / meta["h2"]),
           "dr/dz1": float(1.0 - np.max(np.asarray(tables["shock"]["xi"]) - meta["r_b"]) / meta["N"])}
    if "supersonic_jacobian_min" in meta:
        out["supersonic"] = float(meta["supersonic_jacobian_min"])
    return out


def euler_residual(values, r, sigma, meta, region=None, which=1):
    """Sup of A dPhi/dr + B dPhi/dtheta + h at interior nodes of one region.

    ``values`` is (5, nr, nt) on theta = sigma * stretch(r).  Derivatives are
    second-order central differences with axis parity ghosts; nodes whose
    r-stencil leaves the region, and the r-ends and wall column, are skipped.
    """
    g = _gas(meta)
    eps = meta["epsilon"]
    wall = np.polynomial.Polynomial(meta["wall"])
    th0 = meta["theta0"]
    stretch = 1.0 + eps * wall(r - meta["r1"]) / th0
    dstretch = eps * wall.deriv(1)(r - meta["r1"]) / th0
    hr = r[1] - r[0]
    hs = sigma[1] - sigma[0]
    v = np.asarray(values)
    ext = np.concatenate([AXIS_PARITY[:, None, None] * v[:, :, 1:2], v], axis=2)
    dsig = np.full_like(v, np.nan)
    dsig[:, :, :-1] = (ext[:, :, 2:] - ext[:, :, :-2]) / (2 * hs)
    dr_s = np.full_like(v, np.nan)
    dr_s[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * hr)
    sig = sigma[None, :]
    dth = dsig / stretch[None, :, None]
    dr = dr_s - (sig * dstretch[:, None] / stretch[:, None])[None] * dsig
    theta = sig * stretch[:, None]
    R = np.broadcast_to(r[:, None], theta.shape)
    # theta first so that the axis limits of the cot terms apply to column 0
    rho, c2, Y = _system_terms(R.T, theta.T, v.transpose(0, 2, 1), dth.transpose(0, 2, 1), g,
                               axis_first=True)
    rho, c2, Y0 = rho.T, c2.T, Y.transpose(0, 2, 1)
    u1 = v[0]
    res = np.array([rho * dr[0] + u1 / c2 * dr[3], rho * u1 * dr[0] + dr[3], rho * u1 * dr[1],
                    rho * u1 * dr[2], u1 * dr[4]]) + Y0
    mask = np.ones(theta.shape, bool)
    mask[[0, -1], :] = False
    mask[:, -1] = False
    if region is not None:
        reg = region == which
        mask &= reg
        mask[1:-1] &= reg[:-2] & reg[2:]
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(res[:, mask])))


def background_values(meta, r, theta, region):
    """The radial background on a grid, split by region."""
    g = _gas(meta)
    out = np.zeros((5,) + theta.shape)
    R = np.broadcast_to(r[:, None], theta.shape)
    for branch, reg, S in ((SUPERSONIC, 0, meta["S_minus"]), (SUBSONIC, 1, meta["S_plus"])):
        m = region == reg
        if m.any():
            st = solve_radial_state(R[m], meta["m"], meta["B"], S, branch, g)
            out[0][m] = st.U1
            out[3][m] = st.P
            out[4][m] = S
    return out


def interior_euler(tables, meta):
    """(solution residual, background residual) behind the shock."""
    shape = tuple(meta["eulerian_shape"])
    r = _eul_grid(tables, meta, "r")[:, 0]
    sigma = _eul_grid(tables, meta, "sigma")[0]
    region = _eul_grid(tables, meta, "region").astype(int)
    theta = _eul_grid(tables, meta, "theta")
    vals = np.array([_eul_grid(tables, meta, n) for n in FIELDS])
    res = euler_residual(vals, r, sigma, meta, region)
    ref = background_values(meta, r, theta, region)
    res_bg = euler_residual(ref, r, sigma, dict(meta, epsilon=0.0), region)
    return res, res_bg


def _third_difference(W, h, width=6):
    """Largest third-difference quotient over the last ``width`` cells in z2."""
    return float(np.max(np.abs(np.diff(W[..., -width:], 3, axis=-1)))) / h ** 3


def straight_wall_checks(tables, meta):
    """Normal derivatives at the wall of (W1, W3, W4, W5) and xi'(theta0).

    Returns {name: (value, scale)}.  For a field with zero wall slope the
    one-sided derivative is about h^2 times its third derivative, so the
    scale is the third-difference quotient of the same field at the wall.
    """
    h = meta["h2"]
    out = {}
    for name in ("W1", "W3", "W4", "W5"):
        W = _lag_grid(tables, meta, name)
        out[f"d{name}/dz2(wall)"] = (float(np.max(np.abs(wall_slope_derivative(W, h)))),
                                     _third_difference(W, h))
    W6 = np.asarray(tables["shock"]["xi"]) - meta["r_b"]
    out["xi'(wall)"] = (float(abs(profile_wall_derivative(W6, meta["W6M"], h))),
                        _third_difference(W6, h))
    return out


def regularity_quotients(tables, meta):
    """Max first, second and third differences of xi over the trace (report only)."""
    xi = np.asarray(tables["shock"]["xi"])
    h = meta["h2"]
    return {f"D{k}xi": float(np.max(np.abs(np.diff(xi, k))) / h ** k) for k in (1, 2, 3)}


# ---------------------------------------------------------------------------
# report


def verify_tables(tables: dict, meta: dict, level: str = "basic") -> dict:
    """Named checks with measured value, tolerance and pass flag."""
    h = min(meta["h1"], meta["h2"])
    h2 = max(meta["h1"], meta["h2"]) ** 2
    scale = _scale(meta)
    floor = ROUNDOFF / h
    checks = {}

    rh = rh_residual(tables, meta)
    checks["rh_residual"] = _check(np.max(rh), RH_C * h2 * scale + floor)
    checks["rh_residual"]["components"] = rh.tolist()

    dP, dS = entropy_margins(tables, meta)
    checks["entropy_pressure"] = _check(dP, 0.0, kind="min")
    checks["entropy_entropy"] = _check(dS, 0.0, kind="min")

    inv = streamline_invariants(tables, meta)
    checks["invariant_B"] = _check(inv["B"], INVARIANT_TOL)
    checks["invariant_S"] = _check(inv["S"], INVARIANT_TOL)
    if "rU3sin" in inv:
        checks["invariant_rU3sin"] = _check(inv["rU3sin"], SWIRL_C * h2 * scale + floor)

    for name, val in axis_checks(tables, meta).items():
        checks[f"axis_{name}"] = _check(val, AXIS_C * h2 * scale + floor)

    slip = wall_slip(tables, meta)
    if math.isfinite(slip):
        checks["wall_slip"] = _check(slip, WALL_C * h2 * scale + floor)

    if "eulerian" in tables:
        res, res_bg = interior_euler(tables, meta)
        checks["interior_euler"] = _check(res, EULER_FACTOR * res_bg)
        checks["interior_euler"]["background"] = res_bg

    for name, val in jacobian_margins(tables, meta).items():
        checks[f"jacobian_{name}"] = _check(val, 0.0, kind="min")

    if meta.get("straight_wall"):
        for name, (val, d3) in straight_wall_checks(tables, meta).items():
            checks[f"straight_wall_{name}"] = _check(val, STRAIGHT_C * meta["h2"] ** 2 * d3 + floor)

    report = {"passed": all(c["passed"] for c in checks.values()), "checks": checks}
    if level == "full":
        report["regularity"] = regularity_quotients(tables, meta)
        report["iterations"] = {k: list(map(float, v)) for k, v in tables["iterations"].items()}
    return report


def verify(bundle: SolutionBundle, level: str = "basic") -> dict:
    tables, meta = bundle_tables(bundle)
    return verify_tables(tables, meta, level)
