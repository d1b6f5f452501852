"""Streamline-straightening coordinates, the fixed subsonic rectangle and the
reflection extension operator.

The Lagrangian ordinate is ``y2 = sqrt(r**2 int_0^theta rho U1 sin t dt)``;
taking the square root keeps the map invertible at the axis, where y2 grows
linearly in theta.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np
from scipy.integrate import cumulative_simpson, simpson
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .supersonic import P, S, U1, SupersonicField


class ChartError(RuntimeError):
    pass


class ChartRangeError(ChartError, ValueError):
    pass


class DegenerateChartError(ChartError):
    pass


# ---------------------------------------------------------------------------
# quadrature helpers


def total_flux_from_profile(theta, rhoU1, r1):
    """M with M**2 = r1**2 int rho U1 sin(theta) dtheta (composite Simpson)."""
    theta = np.asarray(theta, dtype=float)
    return float(np.sqrt(r1 ** 2 * simpson(np.asarray(rhoU1) * np.sin(theta), x=theta)))


def total_flux(field: SupersonicField):
    """Total-flux constant M from the inlet slice of the supersonic field."""
    rho = field.density()[0]
    return total_flux_from_profile(field.sigma * field.stretch(field.r[0]),
                                   rho * field.values[0, U1], field.r[0])


def theta_from_chart(y1, s, rhoU1):
    """Polar angle from the Lagrangian ordinate: arccos(1 - int 2s/(y1^2 rho U1) ds).

    ``s`` are increasing ordinates (not necessarily starting at 0) and
    ``rhoU1`` the mass flux sampled there along the line of radius ``y1``.
    The integrand vanishes at s = 0; the composite trapezoid rule is used.
    """
    s = np.asarray(s, dtype=float)
    integrand = 2.0 * s / (np.asarray(y1) ** 2 * np.asarray(rhoU1))
    s_ext = np.concatenate([[0.0], s])
    f_ext = np.concatenate([[0.0], integrand])
    cum = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(s_ext) * (f_ext[1:] + f_ext[:-1]))])[1:]
    if np.any(cum > 2.0) or np.any(cum < 0.0):
        raise ChartRangeError("angle integral outside [0, 2]")
    return np.arccos(1.0 - cum)


# ---------------------------------------------------------------------------
# supersonic chart


@dataclass(frozen=True)
class SupersonicChart:
    """Lagrangian chart of the marched supersonic region."""

    field: SupersonicField
    M: float
    y2_table: np.ndarray    # y2 at the march nodes, shape (nr, ns)
    region: str = "supersonic"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @cached_property
    def _spline(self):
        return RectBivariateSpline(self.field.r, self.field.sigma, self.y2_table, kx=3, ky=3)

    def y2_of(self, r, theta):
        r = self.field._check_r(r)
        return self._spline.ev(r, np.asarray(theta) / self.field.stretch(r))

    def sigma_of(self, y1, y2):
        """Invert y2(y1, sigma) by bracketed Newton (bisection fallback)."""
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        y1, y2 = np.broadcast_arrays(y1, y2)
        if np.any(y2 < -1e-12 * self.M) or np.any(y2 > self.M * (1.0 + 1e-3)):
            raise ChartRangeError("Lagrangian ordinate outside [0, M]")
        y2 = np.maximum(y2, 0.0)
        try:
            self.field._check_r(y1)
        except ValueError as exc:
            raise ChartRangeError(str(exc)) from exc
        th0 = self.field.theta0
        lo = np.zeros(y1.shape)
        hi = np.full(y1.shape, 1.05 * th0)
        x = np.clip(y2 / self.M * th0, 0.0, hi)
        sp = self._spline
        for _ in range(60):
            F = sp.ev(y1, x) - y2
            dF = sp.ev(y1, x, dy=1)
            lo = np.where(F < 0.0, x, lo)
            hi = np.where(F < 0.0, hi, x)
            with np.errstate(divide="ignore", invalid="ignore"):
                xn = x - F / dF
            bad = ~np.isfinite(xn) | (xn < lo) | (xn > hi)
            xn = np.where(bad, 0.5 * (lo + hi), xn)
            step = np.abs(xn - x)
            x = xn
            if np.all(step <= 1e-15 * th0):
                break
        return x

    def theta(self, y1, y2):
        return self.sigma_of(y1, y2) * self.field.stretch(y1)

    def inverse_table(self, n_y2=None):
        """Sampled inverse theta(y1, y2) on the march radii and a uniform y2 grid."""
        n_y2 = n_y2 or self.field.sigma.size
        y2 = np.linspace(0.0, self.M, n_y2)
        R, Y = np.meshgrid(self.field.r, y2, indexing="ij")
        return self.field.r, y2, self.theta(R, Y)

    def jacobian(self):
        """r^2 rho U1 sin(theta)/(2 y2) at the march nodes (axis by its limit)."""
        f = self.field
        rho = f.density()
        th = f.theta_grid()
        rr = f.r[:, None]
        jac = np.empty_like(rho)
        jac[:, 1:] = rr ** 2 * rho[:, 1:] * f.values[:, U1, 1:] * np.sin(th[:, 1:]) / (2 * self.y2_table[:, 1:])
        # y2 ~ theta sqrt(r^2 rho U1 / 2) near the axis
        jac[:, 0] = 0.5 * np.sqrt(2.0 * f.r ** 2 * rho[:, 0] * f.values[:, U1, 0])
        return jac


def build_chart(field: SupersonicField, region: str = "supersonic",
                jacobian_floor: float = 1e-8) -> SupersonicChart:
    """Streamfunction chart of the supersonic field (cumulative Simpson in sigma)."""
    if region != "supersonic":
        raise ValueError("subsonic charts are produced by the fixed-point solver")
    if np.any(field.values[:, U1] <= 0.0):
        raise DegenerateChartError("radial velocity must stay positive")
    rho = field.density()
    stretch = field.stretch(field.r)
    th = field.sigma[None, :] * stretch[:, None]
    integrand = rho * field.values[:, U1] * np.sin(th) * stretch[:, None]
    cum = cumulative_simpson(integrand, x=field.sigma, axis=1, initial=0.0)
    y2 = np.sqrt(field.r[:, None] ** 2 * cum)
    chart = SupersonicChart(field=field, M=total_flux(field), y2_table=y2)
    if np.min(chart.jacobian()) < jacobian_floor:
        raise DegenerateChartError("chart Jacobian below threshold")
    if np.any(np.diff(y2, axis=1) <= 0.0):
        raise DegenerateChartError("streamfunction not increasing in theta")
    return chart


def evaluate_at_lagrangian(field: SupersonicField, chart: SupersonicChart, y1, y2):
    """Supersonic state (5, ...) at Lagrangian point(s) (y1, y2)."""
    sig = chart.sigma_of(y1, y2)
    return field.evaluate_sigma(y1, sig)


# ---------------------------------------------------------------------------
# fixed domain and extension


@dataclass(frozen=True)
class FixedDomain:
    """Rectangle (0, N) x (0, M): vertex grid in z1, cell-centred grid in z2."""

    N: float
    M: float
    n1: int
    n2: int

    def __post_init__(self):
        if not (self.N > 0 and self.M > 0 and self.n1 >= 4 and self.n2 >= 4):
            raise ValueError("invalid fixed domain")

    @property
    def h1(self):
        return self.N / self.n1

    @property
    def h2(self):
        return self.M / self.n2

    @cached_property
    def z1(self):
        return np.linspace(0.0, self.N, self.n1 + 1)

    @cached_property
    def z2(self):
        return (np.arange(self.n2) + 0.5) * self.h2

    @property
    def shape(self):
        return (self.n1 + 1, self.n2)


def extension_coefficients():
    """Exact (c1, c2, c3) with sum c = 1, -sum c/k = 1, sum c/k^2 = 1."""
    rows = [[Fraction(1), Fraction(1), Fraction(1)],
            [Fraction(-1, k) for k in (1, 2, 3)],
            [Fraction(1, k * k) for k in (1, 2, 3)]]
    rhs = [Fraction(1)] * 3
    # Gauss-Jordan elimination in exact arithmetic
    a = [row[:] + [b] for row, b in zip(rows, rhs)]
    for col in range(3):
        piv = next(i for i in range(col, 3) if a[i][col] != 0)
        a[col], a[piv] = a[piv], a[col]
        pv = a[col][col]
        a[col] = [x / pv for x in a[col]]
        for i in range(3):
            if i != col and a[i][col] != 0:
                fac = a[i][col]
                a[i] = [x - fac * y for x, y in zip(a[i], a[col])]
    return tuple(a[i][3] for i in range(3))


_EXT = tuple(float(c) for c in extension_coefficients())


def reflected_arguments(z, N):
    """Arguments of the three reflected samples used by the extension.

    Left of 0 the samples sit at -z/k; right of N at N - (z - N)/k.  Inside
    [0, N] every argument is z itself.
    """
    z = np.asarray(z, dtype=float)
    return [np.where(z < 0.0, -z / k, np.where(z > N, N - (z - N) / k, z)) for k in (1, 2, 3)]


def extend_field(z1, W, z_query):
    """Evaluate the extension of grid data W(z1, ...) at the points z_query.

    Inside [0, N] the data are interpolated by a not-a-knot cubic spline
    along axis 0; outside, the reflection formula with coefficients
    (6, -32, 27) is used, which matches value, first and second derivative
    at both ends.
    """
    z1 = np.asarray(z1, dtype=float)
    N = z1[-1]
    z_query = np.asarray(z_query, dtype=float)
    if np.any(z_query < -N - 1e-12) or np.any(z_query > 2 * N + 1e-12):
        raise ChartRangeError("extension only defined on [-N, 2N]")
    sp = CubicSpline(z1, W, axis=0)
    inside = (z_query >= 0.0) & (z_query <= N)
    out = np.zeros(z_query.shape + np.shape(W)[1:])
    args = reflected_arguments(z_query, N)
    for c, a in zip(_EXT, args):
        out = out + np.where(_expand(inside, out.ndim), 0.0, c * sp(a))
    out = out + np.where(_expand(inside, out.ndim), sp(np.where(inside, z_query, 0.0)), 0.0)
    return out


def _expand(mask, ndim):
    return mask.reshape(mask.shape + (1,) * (ndim - mask.ndim))


def extend_grid(W, h1, n_ghost):
    """Append n_ghost extension nodes on each side of uniform grid data (axis 0)."""
    n = W.shape[0]
    z1 = h1 * np.arange(n)
    zq = h1 * np.arange(-n_ghost, n + n_ghost)
    return extend_field(z1, W, zq)


def lagrange_columns(values, x0, h, xq):
    """Cubic Lagrange interpolation column by column on a uniform grid.

    ``values`` has shape (n, m) sampled at x0 + h*i; ``xq`` has shape (k, m)
    with column j queried against column j of ``values``.
    """
    n = values.shape[0]
    t = (np.asarray(xq) - x0) / h
    i0 = np.clip(np.floor(t).astype(int) - 1, 0, n - 4)
    u = t - i0
    cols = np.broadcast_to(np.arange(values.shape[1]), t.shape)
    v0 = values[i0, cols]
    v1 = values[i0 + 1, cols]
    v2 = values[i0 + 2, cols]
    v3 = values[i0 + 3, cols]
    w0 = -(u - 1) * (u - 2) * (u - 3) / 6.0
    w1 = u * (u - 2) * (u - 3) / 2.0
    w2 = -u * (u - 1) * (u - 3) / 2.0
    w3 = u * (u - 1) * (u - 2) / 6.0
    return w0 * v0 + w1 * v1 + w2 * v2 + w3 * v3


def angle_lines(domain: FixedDomain, r_b, W6, rhoU1_ext, n_ghost):
    """Angle integral on lines of fixed physical radius.

    Returns (Y, G, G_wall): the radii of the lines, the integral
    int_0^{z2} 2s/(Y^2 rho U1) ds at the cell centres, shape (len(Y), n2), and
    its value at z2 = M.  ``rhoU1_ext`` is the mass flux on the extended z1
    grid (n_ghost extra nodes on both sides), shape (n1 + 1 + 2 n_ghost, n2).
    """
    N, h1, h2 = domain.N, domain.h1, domain.h2
    s = domain.z2
    x0 = -n_ghost * h1
    n_ext = rhoU1_ext.shape[0]
    # radius lines are kept far enough inside the extended grid that their
    # fixed-domain abscissae stay within it
    wmax = float(np.max(np.abs(W6)))
    margin = int(np.ceil(wmax * (1.0 + N / (N - wmax)) / h1)) + 1
    Y = r_b + x0 + h1 * np.arange(margin, n_ext - margin)
    if Y.size < 4:
        raise ChartRangeError("shock displacement exceeds the extension layer")
    psi = r_b + W6
    zq = (Y[:, None] - psi[None, :]) * N / (N - W6[None, :])
    if zq.min() < x0 or zq.max() > x0 + h1 * (n_ext - 1):
        raise ChartRangeError("shock displacement exceeds the extension layer")
    flux = lagrange_columns(rhoU1_ext, x0, h1, zq)
    f = 2.0 * s[None, :] / (Y[:, None] ** 2 * flux)
    G = np.empty_like(f)
    G[:, 0] = 0.25 * h2 * f[:, 0]
    G[:, 1:] = G[:, :1] + np.cumsum(0.5 * h2 * (f[:, 1:] + f[:, :-1]), axis=1)
    f_wall = (15.0 * f[:, -1] - 10.0 * f[:, -2] + 3.0 * f[:, -3]) / 8.0
    G_wall = G[:, -1] + 0.25 * h2 * (f[:, -1] + f_wall)
    return Y, G, G_wall


def angle_table(domain: FixedDomain, r_b, W6, rhoU1_ext, n_ghost):
    """Streamline angle theta(z1, z2) of the subsonic chart.

    The angle integral is accumulated on vertical lines of fixed physical
    radius, where the Lagrangian ordinate is a true coordinate, and then
    sampled at the radius ``r_b + z1 + (N - z1) W6 / N`` of each grid node.
    """
    N, h1 = domain.N, domain.h1
    Y, G, _ = angle_lines(domain, r_b, W6, rhoU1_ext, n_ghost)
    radius = r_b + domain.z1[:, None] + (N - domain.z1[:, None]) * W6[None, :] / N
    if radius.min() < Y[1] or radius.max() > Y[-2]:
        raise ChartRangeError("shock displacement exceeds the extension layer")
    vartheta = lagrange_columns(G, Y[0], h1, radius)
    if np.any(vartheta < 0.0) or np.any(vartheta > 2.0):
        raise ChartRangeError("angle integral outside [0, 2]")
    return np.arccos(1.0 - vartheta)
