import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
import sympy as sp

from swirlshock.background import SUPERSONIC
from swirlshock.gas import density_from_PS
from swirlshock.harness.pipeline import build_perturbation
from swirlshock.lagrangian import (ChartRangeError, FixedDomain, build_chart, evaluate_at_lagrangian,
                                   extend_field, extension_coefficients, theta_from_chart,
                                   total_flux, total_flux_from_profile)
from swirlshock.supersonic import march, radial_field

from cases import orders


@pytest.fixture(scope="module")
def marched(cfg, bg):
    p = build_perturbation(cfg.with_updates(perturbation={"epsilon": 2e-3, "wall": [0.0, 0.0, 0.3]}))
    f = march(p, bg, 64)
    return f, build_chart(f)


def test_total_flux_constant_integrand():
    th0, k, r1 = 0.7, 1.9, 1.3
    th = np.linspace(0.0, th0, 401)
    M = total_flux_from_profile(th, np.full_like(th, k), r1)
    assert M ** 2 == pytest.approx(r1 ** 2 * k * (1 - math.cos(th0)), rel=1e-10)


def test_total_flux_richardson():
    th0 = 0.5
    f = lambda t: (1.0 + 0.4 * t * t + 0.3 * t ** 3)
    t = sp.symbols("t")
    exact = float(sp.integrate((1 + sp.Rational(2, 5) * t ** 2 + sp.Rational(3, 10) * t ** 3) * sp.sin(t),
                               (t, 0, sp.Rational(1, 2))))
    err = []
    for n in (16, 32, 64):
        th = np.linspace(0.0, th0, n + 1)
        err.append(abs(total_flux_from_profile(th, f(th), 1.0) ** 2 - exact))
    assert err[0] / err[1] == pytest.approx(16.0, rel=0.15)
    assert err[1] / err[2] == pytest.approx(16.0, rel=0.15)


def test_total_flux_background(bg):
    f = radial_field(bg, 32)
    U, rho, _, _ = bg.profile(bg.r1, SUPERSONIC)
    expected = bg.r1 ** 2 * rho * U * (1 - math.cos(bg.geometry.theta0))
    # composite Simpson on sin(theta) with 32 cells
    assert total_flux(f) ** 2 == pytest.approx(float(expected), rel=1e-8)


def test_background_chart_closed_form(bg):
    errs = []
    for n in (32, 64, 128):
        ch = build_chart(radial_field(bg, n))
        th = ch.field.theta_grid()
        errs.append(np.max(np.abs(ch.y2_table - np.sqrt((1 - np.cos(th)) / bg.kappa_b))))
        assert np.all(ch.y2_table[:, 0] == 0.0)
    assert errs[-1] < 1e-8
    assert np.min(orders(errs)) >= 2.5


def test_theta_from_chart_background(bg):
    k = bg.kappa_b
    y1 = 1.4
    s = np.linspace(0.01, 0.9, 50)
    # r^2 rho U is the constant mass flux m on every radius
    th = theta_from_chart(y1, s, np.full_like(s, bg.m / y1 ** 2))
    np.testing.assert_allclose(th, np.arccos(1 - k * s ** 2), rtol=1e-12)
    assert theta_from_chart(y1, np.array([0.0]), np.array([1.0]))[0] == 0.0


def test_theta_from_chart_against_inverse_table(cfg, bg):
    p = build_perturbation(cfg.with_updates(perturbation={"epsilon": 2e-3, "wall": [0.0, 0.0, 0.3]}))
    errs = []
    for n in (32, 64, 128):
        f = march(p, bg, n)
        ch = build_chart(f)
        y1 = float(f.r[len(f.r) // 2])
        s = np.linspace(0.0, ch.M, n + 1)[1:]
        v = evaluate_at_lagrangian(f, ch, np.full_like(s, y1), s)
        rhoU = density_from_PS(v[3], v[4], f.gas) * v[0]
        errs.append(np.max(np.abs(theta_from_chart(y1, s, rhoU) - ch.theta(y1, s))))
    # two independent paths agree to O(h^2) when both grids are refined
    assert errs[-1] < 1e-5
    assert np.min(orders(errs)) >= 1.8


def test_chart_round_trip(marched, bg):
    f, ch = marched
    R, T = np.meshgrid(np.linspace(bg.r1, bg.r2, 9), np.linspace(0.0, 0.95, 9) * bg.geometry.theta0,
                       indexing="ij")
    T = T * f.stretch(R)
    back = ch.theta(R, ch.y2_of(R, T))
    assert np.max(np.abs(back - T)) < 1e-10


def test_chart_monotone_and_near_axis_bounds(marched):
    f, ch = marched
    assert np.all(np.diff(ch.y2_table, axis=1) > 0)
    th = f.theta_grid()
    ratio = ch.y2_table[:, 1:4] / th[:, 1:4]
    q = f.r[:, None] ** 2 * f.density() * f.values[:, 0]
    lo, hi = math.sqrt(np.min(q) / 2), math.sqrt(np.max(q) / 2)
    assert np.all(ratio >= lo * (1 - 1e-3)) and np.all(ratio <= hi * (1 + 1e-3))
    assert np.min(ch.jacobian()) > 0


def test_evaluate_at_lagrangian_axis(marched, bg):
    f, ch = marched
    v = evaluate_at_lagrangian(f, ch, np.linspace(bg.r1, bg.r2, 5), np.zeros(5))
    assert np.max(np.abs(v[1:3])) < 1e-12


def test_evaluate_at_lagrangian_background(bg):
    f = radial_field(bg, 32)
    ch = build_chart(f)
    y1 = np.array([1.1, 1.5, 1.9])
    v = evaluate_at_lagrangian(f, ch, y1, 0.4 * ch.M)
    U, _, P, _ = bg.profile(y1, SUPERSONIC)
    np.testing.assert_allclose(v[0], U, rtol=1e-5)
    np.testing.assert_allclose(v[3], P, rtol=1e-5)


def test_chart_rejects_out_of_range(marched):
    f, ch = marched
    with pytest.raises(ChartRangeError):
        ch.sigma_of(1.5, 1.5 * ch.M)


def test_extension_coefficients_exact():
    c = extension_coefficients()
    assert c == (Fraction(6), Fraction(-32), Fraction(27))
    assert sum(c) == 1
    assert -sum(ck / k for k, ck in enumerate(c, 1)) == 1
    assert sum(ck / k ** 2 for k, ck in enumerate(c, 1)) == 1


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), c=st.floats(-3, 3), N=st.floats(0.2, 2.0))
def test_extension_reproduces_quadratics(a, b, c, N):
    z = np.linspace(0.0, N, 33)
    q = lambda x: a + b * x + c * x * x
    zq = np.linspace(-N, 2 * N, 121)
    ext = extend_field(z, q(z), zq)
    scale = 1.0 + abs(a) + abs(b) * N + abs(c) * N * N
    assert np.max(np.abs(ext - q(zq))) <= 1e-12 * scale


@settings(max_examples=30, deadline=None)
@given(s=st.floats(-2, 2), t=st.floats(-2, 2))
def test_extension_is_linear(s, t):
    z = np.linspace(0.0, 1.0, 17)
    u, v = np.sin(3 * z), np.exp(z)
    zq = np.linspace(-1.0, 2.0, 41)
    lhs = extend_field(z, s * u + t * v, zq)
    rhs = s * extend_field(z, u, zq) + t * extend_field(z, v, zq)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * (1 + abs(s) + abs(t)) * 10


def test_extension_of_cubic_is_c2_at_ends():
    N = 1.0
    z = np.linspace(0.0, N, 65)
    W = z ** 3
    d = 1e-4
    for end in (0.0, N):
        side = lambda x: extend_field(z, W, np.array([x]))[0]
        inner = -d if end == 0.0 else d
        outer_pts = [end + inner * k for k in (1, 2, 3)]
        inner_pts = [end - inner * k for k in (1, 2, 3)]
        f0 = side(end)
        fo = [side(x) for x in outer_pts]
        fi = [side(x) for x in inner_pts]
        # one-sided value, slope and curvature from each side
        val = abs((3 * fo[0] - 3 * fo[1] + fo[2]) - (3 * fi[0] - 3 * fi[1] + fi[2]))
        slope = abs((-3 * f0 + 4 * fo[0] - fo[1]) / (2 * d) + (-3 * f0 + 4 * fi[0] - fi[1]) / (2 * d))
        curv = abs((f0 - 2 * fo[0] + fo[1]) - (f0 - 2 * fi[0] + fi[1])) / d ** 2
        assert val < 1e-10
        assert slope < 1e-6
        # one-sided second differences carry an O(d) third-derivative term
        assert curv < 100 * d
        # the third derivative does jump
    third_in = 6.0
    zo = np.array([-3 * d, -2 * d, -d, 0.0])
    fo = extend_field(z, W, zo)
    third_out = (fo[3] - 3 * fo[2] + 3 * fo[1] - fo[0]) / d ** 3
    assert abs(third_out - third_in) > 1.0


def test_extension_domain_and_fixed_domain_checks():
    z = np.linspace(0.0, 1.0, 9)
    with pytest.raises(ChartRangeError):
        extend_field(z, z, np.array([2.5]))
    with pytest.raises(ValueError):
        FixedDomain(N=1.0, M=1.0, n1=2, n2=8)
    dom = FixedDomain(N=0.5, M=0.8, n1=10, n2=8)
    assert dom.shape == (11, 8)
    assert dom.z2[0] == pytest.approx(0.5 * dom.h2)
