import numpy as np
import pytest

from swirlshock.harness.config import default_config
from swirlshock.harness.pipeline import build_perturbation, build_subsonic
from swirlshock.lagrangian import FixedDomain
from swirlshock.subsonic_iter import (BackgroundUpstream, ContractionError, NonConvergenceError,
                                      PerturbationState, apply_map, assemble_coefficients,
                                      assemble_potential, axis_defects, compute_nonlinear_data,
                                      fixed_point_solve, potential_residual, recover_W2_W4,
                                      solve_potential, state_norm)

from cases import background_flux, manufactured_potential_errors, orders, solved


@pytest.fixture(scope="module")
def coeffs(bg):
    dom = FixedDomain(bg.r2 - bg.r_b, background_flux(bg), 32, 32)
    return assemble_coefficients(bg, dom)


def _problem(bg, epsilon, n=16, **kw):
    cfg = default_config(perturbation={"epsilon": epsilon}, numerics={"n1": n, "n2": n})
    pert = build_perturbation(cfg)
    return build_subsonic(cfg, bg, pert, BackgroundUpstream(bg))


def test_sign_pattern(coeffs):
    assert all(coeffs.sign_report().values())
    assert coeffs.e2 > 0


def test_integrating_factors_normalized(coeffs):
    assert coeffs.lambda1[0] == pytest.approx(1.0, abs=1e-14)
    assert coeffs.lambda4[0] == pytest.approx(1.0, abs=1e-14)


def test_coefficients_validated(coeffs):
    assert coeffs.validation
    for name, rec in coeffs.validation.items():
        assert rec["passed"] and rec["rel_error"] < 1e-5, name


def test_zero_data_gives_zero_potential(coeffs):
    op = assemble_potential(coeffs)
    sol = solve_potential(op)
    assert np.max(np.abs(sol.upsilon)) == 0.0 and sol.mu == 0.0
    W2, W4, W6M = recover_W2_W4(sol, coeffs, None, None)
    assert np.max(np.abs(W2)) == 0.0 and np.max(np.abs(W4)) == 0.0 and W6M == 0.0


def test_potential_operator_consistency(coeffs):
    op = assemble_potential(coeffs)
    rng = np.random.default_rng(3)
    src = rng.standard_normal(coeffs.domain.shape)
    src[0] = 0.0
    src[-1] = 0.0
    sol = solve_potential(op, source=src)
    np.testing.assert_allclose(potential_residual(op, sol.upsilon), src, atol=1e-9)
    assert np.isfinite(op.condition_estimate)


def test_manufactured_potential_order():
    errors, conds = manufactured_potential_errors((16, 32, 64))
    assert min(orders(errors)) >= 1.8
    assert all(np.isfinite(c) for c in conds)


def test_nonlinear_data_vanishes_at_background(bg):
    prob = _problem(bg, 0.0)
    data = compute_nonlinear_data(PerturbationState.zeros(prob.domain), prob)
    # G4 and G5 are unit-size profiles that enter the boundary data times epsilon
    for name in ("F1", "F2", "G1", "G2", "G3", "bc_shock", "bc_exit", "bc_wall"):
        assert np.max(np.abs(getattr(data, name))) < 1e-12, name


def test_background_is_fixed_point(bg):
    prob = _problem(bg, 0.0)
    W, rep = fixed_point_solve(prob)
    assert rep.converged and rep.iterations == 1
    assert state_norm(W, prob.domain) < 1e-12


def test_limit_independent_of_start(bg):
    prob = _problem(bg, 1e-3)
    W0, rep0 = fixed_point_solve(prob, tol=1e-13)
    start = W0.scaled(1.5)
    W1, rep1 = fixed_point_solve(prob, tol=1e-13, initial=start)
    assert rep1.converged
    assert state_norm(W1 - W0, prob.domain) < 1e-9 * max(state_norm(W0, prob.domain), 1.0)


def test_map_contracts(bg):
    prob = _problem(bg, 1e-3)
    W, rep = fixed_point_solve(prob)
    assert rep.converged
    assert all(q < 0.5 for q in rep.ratios[1:] if np.isfinite(q))
    Wn, _, _ = apply_map(W, prob)
    assert state_norm(Wn - W, prob.domain) < 1e-9


def test_iteration_limit_raises(bg):
    prob = _problem(bg, 1e-3)
    with pytest.raises(NonConvergenceError) as info:
        fixed_point_solve(prob, max_iter=1)
    assert info.value.report.iterations == 1


def test_trust_region(bg):
    prob = _problem(bg, 1e-3)
    with pytest.raises(ContractionError):
        fixed_point_solve(prob, delta=1e-9)


def test_axis_defects_small():
    b = solved(1e-3, 32, reconstruct=False)
    d = axis_defects(b.state, b.problem.domain)
    assert max(d.values()) < 0.05
