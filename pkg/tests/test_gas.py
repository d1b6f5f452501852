import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swirlshock.gas import (FlowState, GasConstants, GasDomainError, bernoulli, critical_speed,
                            density_from_PS, entropy_from_rhoP, isentropic_mass_flux, mach, pressure_from_enthalpy,
                            pressure_from_rhoS, radial_velocity_from_bernoulli, sound_speed,
                            sound_speed_sq)
from swirlshock.background import SUBSONIC

G14 = GasConstants(1.4, 1.0, 1.0)
G2 = GasConstants(2.0, 1.0, 1.0)

# bisection root of rho**1.4 exp(0.3) = 2.5 (brentq, xtol 1e-15), frozen
RHO_DERIVED = 1.5530296959079486


def test_density_exact_root():
    assert density_from_PS(4.0, 0.0, G2) == pytest.approx(2.0, rel=1e-15)


def test_density_identity():
    assert density_from_PS(1.0, 0.0, G14) == pytest.approx(1.0, rel=1e-15)


def test_density_against_bisection_oracle():
    assert density_from_PS(2.5, 0.3, G14) == pytest.approx(RHO_DERIVED, rel=1e-13)


def test_density_rejects_nonpositive_pressure():
    with pytest.raises(GasDomainError):
        density_from_PS(0.0, 0.0, G14)
    with pytest.raises(GasDomainError):
        density_from_PS(np.array([1.0, -1.0]), 0.0, G14)


@pytest.mark.parametrize("kw", [{"gamma": 1.0}, {"A": 0.0}, {"c_v": -1.0}])
def test_gas_constants_invariants(kw):
    with pytest.raises(GasDomainError):
        GasConstants(**kw)


def test_flow_state_requires_positive_pressure():
    with pytest.raises(GasDomainError):
        FlowState(1.0, 0.0, 0.0, -1.0, 0.0)


def test_sound_speed_unit_inputs():
    assert sound_speed(FlowState(0, 0, 0, 1.0, 0.0), G14) == pytest.approx(math.sqrt(1.4), rel=1e-15)


def test_sound_speed_normalized():
    # entropy chosen so that rho = 1 at P = 1/gamma
    S = entropy_from_rhoP(1.0, 1 / 1.4, G14)
    assert sound_speed(FlowState(0, 0, 0, 1 / 1.4, S), G14) == pytest.approx(1.0, rel=1e-15)


def test_post_shock_state_subsonic(bg):
    st_ = bg.state(bg.r_b, SUBSONIC)
    assert float(sound_speed(st_, bg.gas)) > abs(st_.U1)


def test_bernoulli_examples():
    assert bernoulli(FlowState(1, 0, 0, 1.0, 0.0), G2) == pytest.approx(2.5, rel=1e-15)
    assert bernoulli(FlowState(0, 0, 0, 1.0, 0.0), G14) == pytest.approx(3.5, rel=1e-15)


def test_bernoulli_equal_across_background_shock(bg):
    Bm = bernoulli(bg.upstream_shock_state, bg.gas)
    Bp = bernoulli(bg.downstream_shock_state, bg.gas)
    assert Bp == pytest.approx(Bm, rel=1e-13)


def test_mach_sonic_construction():
    P, S = 0.8, 0.1
    c = math.sqrt(float(sound_speed_sq(P, S, G14)))
    assert mach(FlowState(c * 0.6, c * 0.8, 0.0, P, S), G14) == pytest.approx(1.0, rel=1e-14)


def test_mach_on_background_branches(bg):
    from swirlshock.background import SUPERSONIC
    assert float(mach(bg.state(bg.r1, SUPERSONIC), bg.gas)) > 1.0
    assert float(mach(bg.state(bg.r2, SUBSONIC), bg.gas)) < 1.0


def test_radial_velocity_from_bernoulli_round_trip():
    st_ = FlowState(1.3, 0.2, -0.4, 0.9, 0.05)
    B = bernoulli(st_, G14)
    U1 = radial_velocity_from_bernoulli(B, st_.U3, st_.U2 / st_.U1, st_.P, st_.S, G14)
    assert U1 == pytest.approx(1.3, rel=1e-13)


@settings(max_examples=200, deadline=None)
@given(logP=st.floats(math.log(1e-3), math.log(1e3)), S=st.floats(-2.0, 2.0),
       gamma=st.floats(1.05, 3.0))
def test_density_round_trip(logP, S, gamma):
    g = GasConstants(gamma, 1.0, 1.0)
    P = math.exp(logP)
    rho = density_from_PS(P, S, g)
    assert abs(pressure_from_rhoS(rho, S, g) - P) <= 1e-12 * P


@settings(max_examples=100, deadline=None)
@given(U1=st.floats(0.1, 3.0), q=st.floats(0.0, 2.0), phi=st.floats(0.0, 2 * math.pi),
       P=st.floats(0.1, 5.0), S=st.floats(-1.0, 1.0))
def test_bernoulli_rotation_invariant(U1, q, phi, P, S):
    a = bernoulli(FlowState(U1, q, 0.0, P, S), G14)
    b = bernoulli(FlowState(U1, q * math.cos(phi), q * math.sin(phi), P, S), G14)
    assert b == pytest.approx(a, rel=1e-14, abs=1e-14)


@settings(max_examples=50, deadline=None)
@given(B=st.floats(0.5, 10.0), S=st.floats(-1.0, 1.0), gamma=st.floats(1.1, 2.0))
def test_mass_flux_maximum_at_sonic_point(B, S, gamma):
    g = GasConstants(gamma, 1.0, 1.0)
    Umax = math.sqrt(2.0 * B)
    U = np.linspace(1e-6 * Umax, (1 - 1e-9) * Umax, 20001)
    q = isentropic_mass_flux(U, B, S, g)
    k = int(np.argmax(q))
    assert 0 < k < U.size - 1
    # one interior maximum: increasing before, decreasing after
    assert np.all(np.diff(q[:k + 1]) > 0) and np.all(np.diff(q[k:]) < 0)
    cstar = float(critical_speed(B, g))
    assert abs(U[k] - cstar) <= 2 * (U[1] - U[0])
    c_at = math.sqrt(float(sound_speed_sq(pressure_from_enthalpy(B - 0.5 * cstar ** 2, S, g), S, g)))
    assert c_at == pytest.approx(cstar, rel=1e-12)
