import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swirlshock.background import (SUBSONIC, SUPERSONIC, ExitPressureRangeError, NozzleGeometry,
                                   background_theta, d1_coefficient, exit_pressure_given_shock,
                                   exit_pressure_range, normal_shock, shoot_shock_position,
                                   solve_radial_state)
from swirlshock.gas import (FlowState, GasConstants, bernoulli, critical_speed, density_from_PS,
                            entropy_from_rhoP, isentropic_mass_flux, mach, pressure_from_enthalpy,
                            sound_speed)

G = GasConstants(1.4, 1.0, 1.0)


def _upstream(M1, P=1.0, rho=1.0):
    S = float(entropy_from_rhoP(rho, P, G))
    c = math.sqrt(G.gamma * P / rho)
    return FlowState(M1 * c, 0.0, 0.0, P, S)


def _jump_residuals(a: FlowState, b: FlowState):
    ra, rb = density_from_PS(a.P, a.S, G), density_from_PS(b.P, b.S, G)
    mass = (rb * b.U1 - ra * a.U1) / (ra * a.U1)
    mom = (rb * b.U1 ** 2 + b.P - ra * a.U1 ** 2 - a.P) / (ra * a.U1 ** 2 + a.P)
    ener = (bernoulli(b, G) - bernoulli(a, G)) / bernoulli(a, G)
    return np.abs([mass, mom, ener])


# ---------------------------------------------------------------------------
# radial states


def test_radial_state_round_trip(cfg):
    r, U, rho, S = 1.3, 1.7, 0.8, 0.05
    P = float(np.exp(S) * rho ** G.gamma)
    B = float(bernoulli(FlowState(U, 0, 0, P, S), G))
    c = math.sqrt(G.gamma * P / rho)
    branch = SUPERSONIC if U > c else SUBSONIC
    st_ = solve_radial_state(r, r * r * rho * U, B, S, branch, G)
    assert st_.U1 == pytest.approx(U, rel=1e-12)
    assert st_.P == pytest.approx(P, rel=1e-12)


def test_subsonic_branch_far_field(bg):
    st_ = solve_radial_state(1e4, bg.m, bg.B, bg.S_plus, SUBSONIC, bg.gas)
    assert st_.U1 < 1e-6
    P0 = float(pressure_from_enthalpy(bg.B, bg.S_plus, bg.gas))
    assert st_.P == pytest.approx(P0, rel=1e-10)


def test_branches_merge_at_sonic_flux():
    B, S, r = 3.0, 0.1, 1.2
    cstar = float(critical_speed(B, G))
    m_crit = r * r * float(isentropic_mass_flux(cstar, B, S, G))
    sup = solve_radial_state(r, m_crit * (1 - 1e-10), B, S, SUPERSONIC, G)
    sub = solve_radial_state(r, m_crit * (1 - 1e-10), B, S, SUBSONIC, G)
    # roots split like sqrt(1e-10)
    assert abs(sup.U1 - sub.U1) < 1e-4 * cstar
    assert sup.U1 > cstar > sub.U1


def test_branch_invariants(bg):
    for branch, lo in ((SUPERSONIC, bg.r1), (SUBSONIC, bg.r_b)):
        r = np.linspace(lo, bg.r2, 41)
        U, rho, P, _ = bg.profile(r, branch)
        st_ = bg.state(r, branch)
        assert np.max(np.abs(r * r * rho * U - bg.m)) <= 1e-12 * bg.m
        assert np.max(np.abs(bernoulli(st_, bg.gas) - bg.B)) <= 1e-12 * bg.B
    Mm = mach(bg.state(np.linspace(bg.r1, bg.r2, 41), SUPERSONIC), bg.gas)
    Mp = mach(bg.state(np.linspace(bg.r_b, bg.r2, 41), SUBSONIC), bg.gas)
    assert np.all(Mm > 1.0) and np.all(Mp < 1.0)


def test_analytic_derivatives_match_differences(bg):
    r = np.linspace(bg.r_b, bg.r2 - 0.01, 9)
    h = 1e-5
    _, dP, d2P = bg.derivatives(r, SUBSONIC)
    P = lambda x: bg.profile(x, SUBSONIC)[2]
    np.testing.assert_allclose(dP, (P(r + h) - P(r - h)) / (2 * h), rtol=1e-8)
    np.testing.assert_allclose(d2P, (P(r + h) - 2 * P(r) + P(r - h)) / h ** 2, rtol=1e-4)


# ---------------------------------------------------------------------------
# normal shock


def test_normal_shock_classical_mach2():
    up = _upstream(2.0)
    dn = normal_shock(up, G)
    rho_up, rho_dn = density_from_PS(up.P, up.S, G), density_from_PS(dn.P, dn.S, G)
    assert dn.P / up.P == pytest.approx(4.5, rel=1e-10)
    assert rho_dn / rho_up == pytest.approx(8.0 / 3.0, rel=1e-10)
    assert float(mach(dn, G)) == pytest.approx(math.sqrt(7.0 / 21.0), rel=1e-10)


def test_normal_shock_residuals():
    for M1 in (1.2, 2.0, 4.5):
        up = _upstream(M1, P=0.7, rho=1.3)
        assert np.max(_jump_residuals(up, normal_shock(up, G))) < 1e-11


def test_normal_shock_weak_limit():
    # entropy jump of a weak shock is third order in M1 - 1
    jumps = []
    for d in (2e-3, 1e-3):
        up = _upstream(1.0 + d)
        dn = normal_shock(up, G)
        jumps.append(dn.S - up.S)
    assert jumps[0] > 0 and jumps[1] > 0
    assert jumps[0] / jumps[1] == pytest.approx(8.0, rel=0.01)
    up = _upstream(1.0 + 1e-8)
    dn = normal_shock(up, G)
    assert dn.U1 == pytest.approx(up.U1, rel=1e-7)
    assert dn.P == pytest.approx(up.P, rel=1e-7)


def test_normal_shock_rejects_subsonic():
    from swirlshock.background import AdmissibilityError
    with pytest.raises(AdmissibilityError):
        normal_shock(_upstream(0.8), G)


# ---------------------------------------------------------------------------
# exit pressure and shooting


def test_exit_pressure_monotone(cfg):
    r = np.linspace(cfg.geometry.r1 + 1e-6, cfg.geometry.r2 - 1e-6, 50)
    P = [exit_pressure_given_shock(x, cfg.inlet, cfg.geometry, cfg.gas) for x in r]
    assert np.all(np.diff(P) < 0)


def test_exit_pressure_endpoints(cfg):
    rng = exit_pressure_range(cfg.inlet, cfg.geometry, cfg.gas)
    geo = cfg.geometry
    near_r1 = exit_pressure_given_shock(geo.r1 + 1e-9, cfg.inlet, geo, cfg.gas)
    near_r2 = exit_pressure_given_shock(geo.r2 - 1e-9, cfg.inlet, geo, cfg.gas)
    assert near_r1 == pytest.approx(rng.P2, rel=1e-7)
    assert near_r2 == pytest.approx(rng.P1, rel=1e-7)
    assert rng.P1 < rng.P2


def test_exit_pressure_round_trip(cfg, bg):
    assert exit_pressure_given_shock(bg.r_b, cfg.inlet, cfg.geometry, cfg.gas) == pytest.approx(
        cfg.exit_pressure, rel=1e-10)


def test_shooting_recovers_shock(cfg):
    r_star = 1.37
    Pe = exit_pressure_given_shock(r_star, cfg.inlet, cfg.geometry, cfg.gas)
    sol = shoot_shock_position(Pe, cfg.inlet, cfg.geometry, cfg.gas)
    assert abs(sol.r_b - r_star) < 1e-9
    tol = 1e-12
    bound = math.ceil(math.log2((cfg.geometry.r2 - cfg.geometry.r1) / tol))
    assert sol.shooting_iterations <= bound


def test_shooting_open_interval(cfg):
    rng = exit_pressure_range(cfg.inlet, cfg.geometry, cfg.gas)
    for Pe in (rng.P1, rng.P2):
        with pytest.raises(ExitPressureRangeError):
            shoot_shock_position(Pe, cfg.inlet, cfg.geometry, cfg.gas)


@settings(max_examples=15, deadline=None)
@given(Pe=st.floats(1.06, 3.95))
def test_entropy_and_pressure_conditions(cfg, Pe):
    sol = shoot_shock_position(Pe, cfg.inlet, cfg.geometry, cfg.gas)
    assert sol.S_plus > sol.S_minus
    assert sol.downstream_shock_state.P > sol.upstream_shock_state.P
    assert cfg.geometry.r1 < sol.r_b < cfg.geometry.r2


# ---------------------------------------------------------------------------
# background chart


def test_background_theta_examples(bg):
    k = bg.kappa_b
    assert background_theta(0.0, k) == 0.0
    assert background_theta(1.0 / math.sqrt(k), k) == pytest.approx(math.pi / 2, rel=1e-15)
    z2 = np.linspace(1e-2, 0.9, 17)
    lhs = np.sin(background_theta(z2, k)) / (2 * z2)
    # arccos near 1 loses digits, so the identity holds to ~1e-12 only away from 0
    np.testing.assert_allclose(lhs, d1_coefficient(z2, k), rtol=1e-11)
    assert np.isfinite(d1_coefficient(0.0, k))


def test_background_theta_maps_flux_range(bg):
    k = bg.kappa_b
    M = math.sqrt((1 - math.cos(bg.geometry.theta0)) / k)
    z2 = np.linspace(0.0, M, 201)
    th = background_theta(z2, k)
    assert np.all(np.diff(th) > 0)
    assert th[-1] == pytest.approx(bg.geometry.theta0, rel=1e-13)
