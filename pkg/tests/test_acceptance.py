"""The twelve acceptance criteria, one test each; every test prints one PASS/FAIL line."""

import time
from fractions import Fraction

import numpy as np
import pytest

from swirlshock.background import (SUPERSONIC, exit_pressure_given_shock, normal_shock,
                                   shoot_shock_position)
from swirlshock.gas import FlowState, entropy_from_rhoP, mach
from swirlshock.harness.config import default_config
from swirlshock.harness.pipeline import background_eulerian, solve_case
from swirlshock.harness.verify import (bundle_tables, entropy_margins, rh_residual,
                                       straight_wall_checks, streamline_invariants, verify_tables)
from swirlshock.lagrangian import extend_field, extension_coefficients
from swirlshock.subsonic_iter import assemble_coefficients

from cases import manufactured_potential_errors, orders, solved


@pytest.fixture
def report(capsys):
    def emit(number, passed, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if passed else 'FAIL'}  {detail}")
        assert passed, detail
    return emit


def test_01_background_exactness(report):
    cfg = default_config(perturbation={"epsilon": 0.0}, numerics={"n1": 128, "n2": 128})
    t = time.perf_counter()
    b = solve_case(cfg)
    elapsed = time.perf_counter() - t
    bg = b.background
    th = np.linspace(0.0, bg.geometry.theta0, 257)
    xi_err = max(float(np.max(np.abs(b.shock(th) - bg.r_b))),
                 float(np.max(np.abs(b.state.W6))) + abs(b.state.W6M))
    ef = b.eulerian
    f_err = float(np.max(np.abs(ef.values - background_eulerian(bg, ef))))
    lag = np.array(b.downstream_fields())
    c = b.problem.coeffs.background
    ref = np.zeros_like(lag)
    ref[0] = c["U"][:, None]
    ref[3] = c["P"][:, None]
    ref[4] = bg.S_plus
    f_err = max(f_err, float(np.max(np.abs(lag - ref))))
    ok = xi_err < 1e-8 and f_err < 1e-6 and elapsed < 10.0
    report(1, ok, f"xi err {xi_err:.2e} (<1e-8), field err {f_err:.2e} (<1e-6), "
                  f"runtime {elapsed:.2f}s (<10s)")


def test_02_shooting_consistency(report, cfg):
    geo = cfg.geometry
    N = geo.r2 - geo.r1
    rng = np.random.default_rng(20240607)
    r_star = rng.uniform(geo.r1 + 0.05 * N, geo.r2 - 0.05 * N, 20)
    errs = []
    for r in r_star:
        Pe = exit_pressure_given_shock(r, cfg.inlet, geo, cfg.gas)
        errs.append(abs(shoot_shock_position(Pe, cfg.inlet, geo, cfg.gas).r_b - r))
    worst = max(errs)
    report(2, worst < 1e-9, f"20 samples, max |r_b - r_b*| {worst:.2e} (<1e-9)")


def test_03_normal_shock_oracle(report, cfg):
    g = cfg.gas
    # M1 = 2 with rho = 1, P = 1/gamma gives c = 1, U = 2
    up = FlowState(2.0, 0.0, 0.0, 1.0 / 1.4, float(entropy_from_rhoP(1.0, 1.0 / 1.4, g)))
    dn = normal_shock(up, g)
    P_ratio = dn.P / up.P
    rho_ratio = up.U1 / dn.U1
    M2 = float(mach(dn, g))
    errs = [abs(P_ratio / 4.5 - 1), abs(rho_ratio / (8 / 3) - 1),
            abs(M2 / np.sqrt(1 / 3) - 1)]
    report(3, max(errs) < 1e-10, f"P ratio {P_ratio:.12f}, rho ratio {rho_ratio:.12f}, "
                                 f"M2 {M2:.12f}, max rel err {max(errs):.1e} (<1e-10)")


def test_04_rh_residual_order(report):
    res = [float(np.max(rh_residual(*bundle_tables(solved(2e-3, n, reconstruct=False)))))
           for n in (64, 128, 256)]
    p = orders(res)
    report(4, min(p) >= 1.8, f"residuals {', '.join(f'{r:.3e}' for r in res)}; "
                             f"orders {', '.join(f'{q:.3f}' for q in p)} (>=1.8)")


def test_05_epsilon_linearity(report):
    eps = np.array([1e-3, 2e-3, 4e-3])
    nrm = np.array([solved(e, 64, reconstruct=False).report.norms[-1] for e in eps])
    K = float(eps @ nrm / (eps @ eps))
    dev = float(np.max(np.abs(nrm - K * eps) / (K * eps)))
    report(5, dev <= 0.10, f"K {K:.4f}, max relative deviation {100 * dev:.2f}% (<=10%)")


def test_06_contraction(report, cfg):
    eps0 = float(cfg.numerics["epsilon0"])
    eps = [eps0 / 4, eps0 / 2, eps0]
    reps = [solved(e, 64, reconstruct=False).report for e in eps]
    worst = []
    for rep in reps:
        # ratios once the update has reached the round-off floor carry no information
        q = [r for r, u in zip(rep.ratios[1:], rep.updates[1:])
             if np.isfinite(r) and u > 100 * rep.tolerance]
        worst.append(max(q))
    first = [rep.ratios[1] for rep in reps]
    halving = [first[k + 1] / first[k] for k in range(2)]
    ok = max(worst) <= 0.5 and all(abs(h / 2 - 1) <= 0.3 for h in halving)
    report(6, ok, f"eps0 {eps0:g}; max ratios {', '.join(f'{w:.4f}' for w in worst)} (<=0.5); "
                  f"ratio doubling with eps {', '.join(f'{h:.3f}' for h in halving)} (2 +- 30%)")


def test_07_extension_operator(report):
    coeffs = tuple(extension_coefficients())
    exact = coeffs == (Fraction(6), Fraction(-32), Fraction(27))
    N = 0.5
    z = np.linspace(0.0, N, 33)
    zq = np.concatenate([-np.linspace(0.01, N / 3, 9), z, N + np.linspace(0.01, N / 3, 9)])
    err = 0.0
    for c in ([1.0], [0.3, -2.0], [0.7, 1.5, -4.0]):
        p = np.polynomial.Polynomial(c)
        err = max(err, float(np.max(np.abs(extend_field(z, p(z), zq) - p(zq)))))
    report(7, exact and err < 1e-12, f"coefficients {[str(c) for c in coeffs]}, "
                                     f"degree<=2 reproduction err {err:.1e} (<1e-12)")


def test_08_streamline_invariants(report):
    inv = {n: streamline_invariants(*bundle_tables(solved(1e-3, n))) for n in (32, 64, 128)}
    BS = max(max(v["B"], v["S"]) for v in inv.values())
    sw = [inv[n]["rU3sin"] for n in (32, 64, 128)]
    p = orders(sw)
    ok = BS < 1e-12 and min(p) >= 1.8
    report(8, ok, f"B,S variation {BS:.1e} (<1e-12); rU3 sin(theta) err "
                  f"{', '.join(f'{s:.2e}' for s in sw)}, orders {', '.join(f'{q:.2f}' for q in p)}")


def test_09_admissibility(report):
    cases = [(e, n) for e in (1e-3, 2e-3, 4e-3) for n in (64,)] + [(2e-3, 128), (2e-3, 256)]
    margins = [entropy_margins(*bundle_tables(solved(e, n, reconstruct=False))) for e, n in cases]
    dP = min(m[0] for m in margins)
    dS = min(m[1] for m in margins)
    report(9, dP > 0 and dS > 0, f"{len(cases)} cases; min P+ - P- {dP:.4f}, min S+ - S- {dS:.3e}")


def test_10_manufactured_elliptic(report):
    errors, conds = manufactured_potential_errors((16, 32, 64, 128))
    p = orders(errors)
    ok = min(p) >= 1.8 and all(np.isfinite(c) and c > 0 for c in conds)
    report(10, ok, f"errors {', '.join(f'{e:.2e}' for e in errors)}; orders "
                   f"{', '.join(f'{q:.2f}' for q in p)} (>=1.8); max condition {max(conds):.2e}")


def test_11_coefficient_validation(report, bg, cfg):
    from swirlshock.lagrangian import FixedDomain
    from cases import background_flux
    c = assemble_coefficients(bg, FixedDomain(bg.r2 - bg.r_b, background_flux(bg), 64, 64))
    worst = max(v["rel_error"] for v in c.validation.values())
    report(11, worst < 1e-5, f"{len(c.validation)} coefficients, max rel err {worst:.2e} (<1e-5)")


def test_12_straight_wall(report):
    lines, ok = [], True
    for n in (32, 64, 128):
        tables, meta = bundle_tables(solved(1e-3, n))
        rep = verify_tables(tables, meta)
        sw = {k: v for k, v in rep["checks"].items() if k.startswith("straight_wall")}
        ok &= len(sw) == 5 and all(v["passed"] for v in sw.values())
        worst = max(v["value"] / v["tolerance"] for v in sw.values())
        lines.append(f"{n}: worst value/tolerance {worst:.3f}")
    report(12, ok, "; ".join(lines))
