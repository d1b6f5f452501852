"""Space marching of the perturbed axisymmetric supersonic flow.

The steady Euler system is hyperbolic in r when the radial velocity is
supersonic, so the radius plays the role of time.  The polar angle is
stretched to the wall-fitted coordinate ``sigma = theta * theta0 / (theta0 +
eps f(r))``; the wall is then ``sigma = theta0`` for every r.

Spatial derivatives in sigma are second-order central, with parity ghosts at
the axis and one-sided differences plus a characteristic correction at the
wall.  The march itself is classical RK4.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import RectBivariateSpline

from .background import SUPERSONIC, BackgroundSolution
from .gas import GasConstants, density_from_PS

log = logging.getLogger(__name__)

# component order used by every field array
U1, U2, U3, P, S = range(5)
NAMES = ("U1", "U2", "U3", "P", "S")
# parity of each component across the axis (+1 even, -1 odd)
AXIS_PARITY = np.array([1.0, -1.0, -1.0, 1.0, 1.0])


class SupersonicBreakdownError(RuntimeError):
    def __init__(self, r, theta, mach_value):
        super().__init__(
            f"radial Mach number {mach_value:.4f} fell below the margin at r={r:.6f}, theta={theta:.6f}")
        self.r = r
        self.theta = theta
        self.mach = mach_value


class StepSizeError(RuntimeError):
    pass


def _as_profile(p) -> Callable:
    if p is None:
        return Polynomial([0.0])
    if isinstance(p, Polynomial) or callable(p):
        return p
    return Polynomial(np.asarray(p, dtype=float))


@dataclass(frozen=True)
class InletPerturbation:
    """Inlet data ``Psi_b^-(r1) + eps * profile(theta)`` and wall ``theta0 + eps f(r)``.

    Profiles are callables of theta; ``wall`` is a polynomial in ``r - r1``.
    """

    epsilon: float = 0.0
    U1p: Callable = field(default_factory=lambda: Polynomial([0.0]))
    U2p: Callable = field(default_factory=lambda: Polynomial([0.0]))
    U3p: Callable = field(default_factory=lambda: Polynomial([0.0]))
    Pp: Callable = field(default_factory=lambda: Polynomial([0.0]))
    Sp: Callable = field(default_factory=lambda: Polynomial([0.0]))
    wall: Polynomial = field(default_factory=lambda: Polynomial([0.0]))

    def __post_init__(self):
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be non-negative")
        for name in ("U1p", "U2p", "U3p", "Pp", "Sp"):
            object.__setattr__(self, name, _as_profile(getattr(self, name)))
        w = self.wall
        if not isinstance(w, Polynomial):
            w = Polynomial(np.asarray(w, dtype=float))
        object.__setattr__(self, "wall", w)

    @property
    def profiles(self):
        return (self.U1p, self.U2p, self.U3p, self.Pp, self.Sp)

    def wall_derivatives(self, r, r1):
        """(f, f', f'') at radius r."""
        s = np.asarray(r, dtype=float) - r1
        w = self.wall
        return w(s), w.deriv(1)(s), w.deriv(2)(s)

    @property
    def straight_wall(self):
        return bool(np.all(self.wall.coef == 0.0))


def _fd1(f, x, h):
    return (f(x - 2 * h) - 8 * f(x - h) + 8 * f(x + h) - f(x + 2 * h)) / (12 * h)


def _fd2(f, x, h):
    return (-f(x - 2 * h) + 16 * f(x - h) - 30 * f(x) + 16 * f(x + h) - f(x + 2 * h)) / (12 * h * h)


def validate_inlet(pert: InletPerturbation, theta0: float, r1: float = 0.0,
                   rtol: float = 1e-8) -> dict:
    """Check the compatibility identities of the inlet and wall data.

    Derivatives come from fourth-order central differences of the supplied
    profiles.  Returns ``{name: {"residual", "tolerance", "passed"}}``.
    """
    h = 1e-3 * theta0
    samples = np.linspace(0.0, theta0, 33)
    scale = max(1.0, max(float(np.max(np.abs(p(samples)))) for p in pert.profiles))
    U1p, U2p, U3p, Pp, Sp = pert.profiles
    checks = {
        "U2p(0)": U2p(0.0),
        "U3p(0)": U3p(0.0),
        "U2p''(0)": _fd2(U2p, 0.0, h),
        "Pp'(0)": _fd1(Pp, 0.0, h),
        "U3p'(0)": _fd1(U3p, 0.0, h),
        "Sp'(0)": _fd1(Sp, 0.0, h),
        "U2p(theta0)": U2p(theta0),
        "Pp'(theta0)-U3p(theta0)^2 cot(theta0)": _fd1(Pp, theta0, h) - U3p(theta0) ** 2 / math.tan(theta0),
    }
    f0, f1, _ = pert.wall_derivatives(r1, r1)
    checks["f(r1)"] = f0
    checks["f'(r1)"] = f1
    report = {}
    for name, val in checks.items():
        val = float(val)
        report[name] = {"residual": val, "tolerance": rtol * scale, "passed": abs(val) <= rtol * scale}
    return report


def straight_wall_report(pert: InletPerturbation, theta0: float, rtol: float = 1e-8) -> dict:
    """Extra wall-corner identities needed for higher regularity with f = 0."""
    h = 1e-3 * theta0
    U1p, U2p, U3p, Pp, Sp = pert.profiles
    checks = {
        "U3p(theta0)": U3p(theta0),
        "U1p'(theta0)": _fd1(U1p, theta0, h),
        "U3p'(theta0)": _fd1(U3p, theta0, h),
        "Sp'(theta0)": _fd1(Sp, theta0, h),
    }
    return {k: {"residual": float(v), "tolerance": rtol, "passed": abs(float(v)) <= rtol}
            for k, v in checks.items()}


def _system_terms(r, theta, Phi, dPhi_theta, g: GasConstants, axis_first):
    """Return (rho, c2, Y) where Y = B dPhi/dtheta + h for the Euler system.

    ``axis_first`` marks that column 0 lies on the axis, where the cot terms
    are replaced by their limits.
    """
    u1, u2, u3, p, s = Phi
    du1, du2, du3, dp, ds = dPhi_theta
    rho = density_from_PS(p, s, g)
    c2 = g.gamma * p / rho
    with np.errstate(divide="ignore", invalid="ignore"):
        cot = np.cos(theta) / np.sin(theta)
        u2cot = u2 * cot
        u3cot = u3 * cot
    if axis_first:
        u2cot = u2cot.copy()
        u3cot = u3cot.copy()
        u2cot[0] = du2[0]
        u3cot[0] = du3[0]
    inv_r = 1.0 / r
    Y = np.empty_like(Phi)
    # rows: mass, radial momentum, polar momentum, swirl, entropy
    Y[0] = inv_r * (rho * du2 + u2 * dp / c2) + inv_r * rho * (2.0 * u1 + u2cot)
    Y[1] = inv_r * rho * u2 * du1 - inv_r * rho * (u2 * u2 + u3 * u3)
    Y[2] = inv_r * (rho * u2 * du2 + dp) + inv_r * rho * (u1 * u2 - u3 * u3cot)
    Y[3] = inv_r * rho * u2 * du3 + inv_r * rho * (u1 * u3 + u2 * u3cot)
    Y[4] = inv_r * u2 * ds
    return rho, c2, Y


def _solve_A(Phi, rho, c2, Y):
    """Apply the inverse of the r-coefficient matrix (closed form)."""
    u1 = Phi[U1]
    D = np.empty_like(Y)
    D[U1] = (Y[0] - u1 * Y[1] / c2) / (rho * (1.0 - u1 * u1 / c2))
    D[P] = Y[1] - rho * u1 * D[U1]
    D[U2] = Y[2] / (rho * u1)
    D[U3] = Y[3] / (rho * u1)
    D[S] = Y[4] / u1
    return D


def coefficient_matrices(r, theta, state, g: GasConstants):
    """Dense (A, B) of the system A d/dr + B d/dtheta + h = 0 at one point.

    Rows: mass, radial momentum, polar momentum, swirl, entropy.
    """
    u1, u2, u3, p, s = state
    rho = float(density_from_PS(p, s, g))
    c2 = g.gamma * p / rho
    A = np.zeros((5, 5))
    Bm = np.zeros((5, 5))
    A[0, U1] = rho
    A[0, P] = u1 / c2
    A[1, U1] = rho * u1
    A[1, P] = 1.0
    A[2, U2] = rho * u1
    A[3, U3] = rho * u1
    A[4, S] = u1
    Bm[0, U2] = rho / r
    Bm[0, P] = u2 / (r * c2)
    Bm[1, U1] = rho * u2 / r
    Bm[2, U2] = rho * u2 / r
    Bm[2, P] = 1.0 / r
    Bm[3, U3] = rho * u2 / r
    Bm[4, S] = u2 / r
    return A, Bm


@dataclass(frozen=True)
class SupersonicField:
    gas: GasConstants
    r: np.ndarray           # march radii, shape (nr,)
    sigma: np.ndarray       # wall-fitted angle nodes, shape (ns,)
    values: np.ndarray      # shape (nr, 5, ns)
    theta0: float
    epsilon: float
    wall: Polynomial
    r1: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def h_sigma(self):
        return float(self.sigma[1] - self.sigma[0])

    def wall_angle(self, r):
        return self.theta0 + self.epsilon * self.wall(np.asarray(r, dtype=float) - self.r1)

    def stretch(self, r):
        return self.wall_angle(r) / self.theta0

    def theta_grid(self):
        return self.sigma[None, :] * self.stretch(self.r)[:, None]

    def _spline(self, k):
        key = ("spline", k)
        if key not in self._cache:
            self._cache[key] = RectBivariateSpline(self.r, self.sigma, self.values[:, k, :], kx=3, ky=3)
        return self._cache[key]

    def _check_r(self, r):
        r = np.asarray(r, dtype=float)
        span = 1e-12 * (self.r[-1] - self.r[0])
        if np.any(r < self.r[0] - span) or np.any(r > self.r[-1] + span):
            raise ValueError("radius outside the marched range")
        return r

    def evaluate_sigma(self, r, sigma, dsigma=0):
        """All five fields at (r, sigma); shape (5,) + broadcast shape."""
        r = self._check_r(r)
        r, sigma = np.broadcast_arrays(r, np.asarray(sigma, dtype=float))
        out = np.empty((5,) + r.shape)
        for k in range(5):
            out[k] = self._spline(k).ev(r, sigma, dy=dsigma)
        return out

    def evaluate(self, r, theta):
        r = self._check_r(r)
        return self.evaluate_sigma(r, np.asarray(theta) / self.stretch(r))

    def density(self):
        return density_from_PS(self.values[:, P, :], self.values[:, S, :], self.gas)

    def mach(self):
        v = self.values
        c2 = self.gas.gamma * v[:, P, :] / self.density()
        return np.sqrt((v[:, U1] ** 2 + v[:, U2] ** 2 + v[:, U3] ** 2) / c2)


class _Marcher:
    def __init__(self, pert: InletPerturbation, bg: BackgroundSolution, theta0, n_sigma,
                 dissipation=0.5):
        self.dissipation = dissipation
        self.g = bg.gas
        self.pert = pert
        self.eps = pert.epsilon
        self.theta0 = theta0
        self.r1 = bg.r1
        self.sigma = np.linspace(0.0, theta0, n_sigma + 1)
        self.hs = self.sigma[1] - self.sigma[0]

    def wall(self, r):
        f, f1, f2 = self.pert.wall_derivatives(r, self.r1)
        return float(f), float(f1), float(f2)

    def d_sigma(self, Phi):
        hs = self.hs
        d = np.empty_like(Phi)
        d[:, 1:-1] = (Phi[:, 2:] - Phi[:, :-2]) / (2 * hs)
        # ghost value at -hs is parity * Phi[:, 1]
        d[:, 0] = (1.0 - AXIS_PARITY) * Phi[:, 1] / (2 * hs)
        d[:, -1] = (3 * Phi[:, -1] - 4 * Phi[:, -2] + Phi[:, -3]) / (2 * hs)
        return d

    def rhs(self, r, Phi):
        f, f1, f2 = self.wall(r)
        stretch = (self.theta0 + self.eps * f) / self.theta0
        dstretch = self.eps * f1 / self.theta0
        theta = self.sigma * stretch
        dPs = self.d_sigma(Phi)
        dPt = dPs / stretch
        rho, c2, Y = _system_terms(r, theta, Phi, dPt, self.g, axis_first=True)
        R = -_solve_A(Phi, rho, c2, Y) + (self.sigma * dstretch / stretch) * dPs
        if self.dissipation > 0.0:
            R += self._dissipation(r, Phi, stretch)
        R[U2, 0] = 0.0
        R[U3, 0] = 0.0
        if self.eps != 0.0 or np.any(Phi[U2, -1] != 0.0):
            R[:, -1] = self._wall_correction(r, Phi[:, -1], R[:, -1], stretch, dstretch, f1, f2)
        return R

    def _dissipation(self, r, Phi, stretch):
        """Fourth-difference smoothing of size O(h^3), zero on sigma-uniform data.

        The axis uses parity ghosts; the two nodes next to the wall are left
        untouched.
        """
        ext = np.empty((5, Phi.shape[1] + 2))
        ext[:, 2:] = Phi
        ext[:, 1] = AXIS_PARITY * Phi[:, 1]
        ext[:, 0] = AXIS_PARITY * Phi[:, 2]
        d4 = ext[:, :-4] - 4 * ext[:, 1:-3] + 6 * ext[:, 2:-2] - 4 * ext[:, 3:-1] + ext[:, 4:]
        out = np.zeros_like(Phi)
        speed = self.max_slope(r, Phi)
        out[:, :-2] = -(self.dissipation / 16.0) * speed / self.hs * d4
        return out

    def _wall_correction(self, r, state, R, stretch, dstretch, f1, f2):
        """Replace the incoming acoustic amplitude so the slip condition holds."""
        A, Bm = coefficient_matrices(r, self.theta0 * stretch, state, self.g)
        C = (np.linalg.solve(A, Bm) - self.theta0 * dstretch * np.eye(5)) / stretch
        lam, vecs = np.linalg.eig(C)
        k = int(np.argmin(lam.real))
        v = vecs[:, k].real
        b = np.zeros(5)
        b[U2] = 1.0
        b[U1] = -self.eps * r * f1
        target = self.eps * (f1 + r * f2) * state[U1]
        alpha = (target - b @ R) / (b @ v)
        return R + alpha * v

    def max_slope(self, r, Phi):
        """Largest |d sigma / dr| of the characteristics over the grid."""
        f, f1, _ = self.wall(r)
        stretch = (self.theta0 + self.eps * f) / self.theta0
        dstretch = self.eps * f1 / self.theta0
        rho = density_from_PS(Phi[P], Phi[S], self.g)
        c = np.sqrt(self.g.gamma * Phi[P] / rho)
        q = np.hypot(Phi[U1], Phi[U2])
        mu = np.arcsin(np.clip(c / q, 0.0, 1.0))
        alpha = np.arctan2(Phi[U2], Phi[U1])
        lam = np.maximum(np.abs(np.tan(alpha + mu)), np.abs(np.tan(alpha - mu))) / r
        return float(np.max((lam + np.abs(self.sigma * dstretch)) / stretch))

    def check_mach(self, r, Phi, margin):
        rho = density_from_PS(Phi[P], Phi[S], self.g)
        m1 = Phi[U1] / np.sqrt(self.g.gamma * Phi[P] / rho)
        j = int(np.argmin(m1))
        if m1[j] < 1.0 + margin:
            f, _, _ = self.wall(r)
            raise SupersonicBreakdownError(r, self.sigma[j] * (self.theta0 + self.eps * f) / self.theta0, m1[j])


def inlet_state(pert: InletPerturbation, bg: BackgroundSolution, theta):
    base = bg.state(bg.r1, SUPERSONIC)
    eps = pert.epsilon
    U1p, U2p, U3p, Pp, Sp = pert.profiles
    theta = np.asarray(theta, dtype=float)
    one = np.ones_like(theta)
    return np.array([
        base.U1 * one + eps * U1p(theta),
        eps * U2p(theta) * one,
        eps * U3p(theta) * one,
        base.P * one + eps * Pp(theta),
        bg.S_minus * one + eps * Sp(theta),
    ])


def march(pert: InletPerturbation, bg: BackgroundSolution, n_sigma: int,
          n_r: int | None = None, cfl: float = 0.8, mach_margin: float = 0.05,
          r_end: float | None = None, dissipation: float = 0.5) -> SupersonicField:
    """March the supersonic flow from the inlet radius to ``r_end`` (default r2).

    ``n_r`` fixes the number of uniform r-steps; when omitted it is the
    smallest count meeting the CFL bound with safety factor ``cfl``.
    ``dissipation`` scales a fourth-difference smoothing term of size O(h^3).
    """
    theta0 = bg.geometry.theta0
    r_end = bg.r2 if r_end is None else r_end
    mk = _Marcher(pert, bg, theta0, n_sigma, dissipation)
    Phi = inlet_state(pert, bg, mk.sigma)
    mk.check_mach(bg.r1, Phi, mach_margin)
    length = r_end - bg.r1
    slope0 = mk.max_slope(bg.r1, Phi)
    dr_cfl = cfl * mk.hs / slope0
    if n_r is None:
        n_r = max(4, int(math.ceil(length / dr_cfl)))
    dr = length / n_r
    # Courant number of the r-step against the sigma spacing
    if dr * slope0 > mk.hs:
        raise StepSizeError(f"r-step {dr:.3g} violates the CFL bound {mk.hs / slope0:.3g}")
    r_nodes = bg.r1 + dr * np.arange(n_r + 1)
    r_nodes[-1] = r_end
    out = np.empty((n_r + 1, 5, n_sigma + 1))
    out[0] = Phi
    for i in range(n_r):
        r = r_nodes[i]
        k1 = mk.rhs(r, Phi)
        k2 = mk.rhs(r + 0.5 * dr, Phi + 0.5 * dr * k1)
        k3 = mk.rhs(r + 0.5 * dr, Phi + 0.5 * dr * k2)
        k4 = mk.rhs(r + dr, Phi + dr * k3)
        Phi = Phi + dr / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        rn = r_nodes[i + 1]
        Phi[U2, 0] = 0.0
        Phi[U3, 0] = 0.0
        _, f1, _ = mk.wall(rn)
        Phi[U2, -1] = pert.epsilon * rn * f1 * Phi[U1, -1]
        mk.check_mach(rn, Phi, mach_margin)
        if dr * mk.max_slope(rn, Phi) > mk.hs:
            raise StepSizeError(f"CFL bound violated at r={rn:.6f}; refine the r-step")
        out[i + 1] = Phi
    log.debug("supersonic march: %d steps of %.3e over %d sigma cells", n_r, dr, n_sigma)
    return SupersonicField(
        gas=bg.gas, r=r_nodes, sigma=mk.sigma, values=out, theta0=theta0,
        epsilon=pert.epsilon, wall=pert.wall, r1=bg.r1)


def radial_field(bg: BackgroundSolution, n_sigma: int, n_r: int | None = None) -> SupersonicField:
    """The unperturbed supersonic flow sampled on a march grid (exact values)."""
    theta0 = bg.geometry.theta0
    n_r = n_r or max(4, n_sigma)
    r = np.linspace(bg.r1, bg.r2, n_r + 1)
    sigma = np.linspace(0.0, theta0, n_sigma + 1)
    U, _, Pr, _ = bg.profile(r, SUPERSONIC)
    values = np.zeros((n_r + 1, 5, n_sigma + 1))
    values[:, U1] = U[:, None]
    values[:, P] = Pr[:, None]
    values[:, S] = bg.S_minus
    return SupersonicField(bg.gas, r, sigma, values, theta0, 0.0, Polynomial([0.0]), bg.r1)
