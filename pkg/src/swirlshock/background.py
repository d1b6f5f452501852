"""Spherically symmetric transonic shock in a conical nozzle.

Along each smooth branch the radial flow keeps ``r**2 rho U = m``, the
Bernoulli constant ``B`` and the entropy ``S``.  The shock position is fixed by
the exit pressure through a bisection shooting map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .gas import (
    FlowState,
    GasConstants,
    GasDomainError,
    bernoulli,
    critical_speed,
    density_from_PS,
    entropy_from_rhoP,
    isentropic_mass_flux,
    mach,
    pressure_from_enthalpy,
    sound_speed_sq,
)

SUPERSONIC = "supersonic"
SUBSONIC = "subsonic"


class BackgroundError(RuntimeError):
    pass


class NoRadialSolutionError(BackgroundError):
    def __init__(self, flux, critical):
        super().__init__(f"mass flux {flux:.6g} exceeds critical flux {critical:.6g}")
        self.flux = flux
        self.critical = critical


class DegenerateRootError(BackgroundError):
    pass


class AdmissibilityError(BackgroundError):
    pass


class ExitPressureRangeError(BackgroundError):
    def __init__(self, P_e, P1, P2):
        super().__init__(f"exit pressure {P_e:.10g} outside admissible range ({P1:.10g}, {P2:.10g})")
        self.P_e = P_e
        self.P1 = P1
        self.P2 = P2


@dataclass(frozen=True)
class NozzleGeometry:
    r1: float
    r2: float
    theta0: float

    def __post_init__(self):
        if not (0.0 < self.r1 < self.r2):
            raise ValueError(f"need 0 < r1 < r2, got r1={self.r1}, r2={self.r2}")
        if not (0.0 < self.theta0 < 0.5 * math.pi):
            raise ValueError(f"need 0 < theta0 < pi/2, got {self.theta0}")


@dataclass(frozen=True)
class ExitPressureRange:
    P1: float
    P2: float

    def contains(self, P_e: float) -> bool:
        return self.P1 < P_e < self.P2


def _branch_speed(target, B, S, g: GasConstants, branch: str):
    """Solve q(U) = target on one side of the sonic maximum.

    Newton from 1.2 c* (supersonic) or 0.8 c* (subsonic), safeguarded by
    bisection inside the branch bracket so the iterate never crosses the
    sonic point.
    """
    target = np.asarray(target, dtype=float)
    cstar = float(critical_speed(B, g))
    umax = math.sqrt(2.0 * B)
    qmax = float(isentropic_mass_flux(cstar, B, S, g))
    if np.any(target > qmax * (1.0 + 1e-13)):
        raise NoRadialSolutionError(float(np.max(target)), qmax)
    if np.any(target >= qmax * (1.0 - 1e-15)):
        raise DegenerateRootError("requested mass flux sits at the sonic point")
    if np.any(target <= 0.0):
        raise BackgroundError("mass flux must be positive")
    if branch == SUPERSONIC:
        lo = np.full(target.shape, cstar)
        hi = np.full(target.shape, umax)
        U = np.full(target.shape, min(1.2 * cstar, 0.5 * (cstar + umax)))
        sgn = -1.0  # q decreasing on this branch
    elif branch == SUBSONIC:
        lo = np.zeros(target.shape)
        hi = np.full(target.shape, cstar)
        U = np.full(target.shape, 0.8 * cstar)
        sgn = 1.0
    else:
        raise ValueError(f"unknown branch {branch!r}")

    for _ in range(200):
        h = B - 0.5 * U * U
        P = pressure_from_enthalpy(h, S, g)
        rho = density_from_PS(P, S, g)
        c2 = (g.gamma - 1.0) * h
        F = rho * U - target
        dF = rho * (1.0 - U * U / c2)
        # shrink the bracket using the monotonicity of q on the branch
        below = sgn * F < 0.0
        lo = np.where(below, U, lo)
        hi = np.where(below, hi, U)
        with np.errstate(divide="ignore", invalid="ignore"):
            Un = U - F / dF
        bad = ~np.isfinite(Un) | (Un <= lo) | (Un >= hi)
        Un = np.where(bad, 0.5 * (lo + hi), Un)
        done = np.abs(Un - U) <= 1e-15 * np.abs(U) + 1e-300
        U = Un
        if np.all(done) or np.all(hi - lo <= 4e-16 * hi):
            break
    return U


def solve_radial_state(r, m, B, S, branch, g: GasConstants) -> FlowState:
    """Radial state with ``r**2 rho U = m`` and Bernoulli constant ``B``."""
    r = np.asarray(r, dtype=float)
    U = _branch_speed(m / r ** 2, B, S, g, branch)
    P = pressure_from_enthalpy(B - 0.5 * U * U, S, g)
    zero = np.zeros_like(U)
    if U.ndim == 0:
        return FlowState(float(U), 0.0, 0.0, float(P), float(S))
    return FlowState(U, zero, zero, P, np.full_like(U, S))


def normal_shock(upstream: FlowState, g: GasConstants) -> FlowState:
    """Downstream state of a normal shock; U1 is the normal component.

    Conserves rho U1, rho U1**2 + P and B; tangential components pass through.
    The downstream normal speed is the second root of the quadratic obtained
    by eliminating P and rho, taken through the product of roots.
    """
    if not float(mach(FlowState(upstream.U1, 0.0, 0.0, upstream.P, upstream.S), g)) > 1.0:
        raise AdmissibilityError("normal shock needs a supersonic normal component")
    U = upstream.U1
    rho = float(density_from_PS(upstream.P, upstream.S, g))
    mflux = rho * U
    Q = mflux * U + upstream.P
    Bn = float(bernoulli(FlowState(U, 0.0, 0.0, upstream.P, upstream.S), g))
    U_down = float(critical_speed(Bn, g)) ** 2 / U
    P_down = Q - mflux * U_down
    rho_down = mflux / U_down
    S_down = float(entropy_from_rhoP(rho_down, P_down, g))
    return FlowState(U_down, upstream.U2, upstream.U3, P_down, S_down)


def background_theta(z2, kappa_b):
    """Polar angle of the background streamline with Lagrangian ordinate z2."""
    arg = 1.0 - kappa_b * np.asarray(z2, dtype=float) ** 2
    if np.any(arg < -1.0 - 1e-14) or np.any(arg > 1.0 + 1e-14):
        raise GasDomainError("kappa_b z2**2 outside [0, 2]")
    return np.arccos(np.clip(arg, -1.0, 1.0))


def d1_coefficient(z2, kappa_b):
    """sin(theta_b)/(2 z2) through its closed form, regular at z2 = 0."""
    z2 = np.asarray(z2, dtype=float)
    return 0.5 * np.sqrt(kappa_b * (2.0 - kappa_b * z2 ** 2))


def d2_coefficient(z2, kappa_b):
    """kappa_b cos(theta_b)/(2 z2); singular at the axis."""
    z2 = np.asarray(z2, dtype=float)
    return kappa_b * (1.0 - kappa_b * z2 ** 2) / (2.0 * z2)


def _inlet_invariants(inlet: FlowState, geometry: NozzleGeometry, g: GasConstants):
    if not float(mach(inlet, g)) > 1.0:
        raise AdmissibilityError("inlet state must be supersonic")
    rho = float(density_from_PS(inlet.P, inlet.S, g))
    m = geometry.r1 ** 2 * rho * inlet.U1
    B = float(bernoulli(inlet, g))
    return m, B, float(inlet.S)


def _shock_entropy(r_b, m, B, S_minus, g):
    up = solve_radial_state(r_b, m, B, S_minus, SUPERSONIC, g)
    return normal_shock(up, g).S


def exit_pressure_given_shock(r_b, inlet: FlowState, geometry: NozzleGeometry,
                              g: GasConstants) -> float:
    """Exit pressure produced by a normal shock standing at radius r_b."""
    if not (geometry.r1 <= r_b <= geometry.r2):
        raise BackgroundError(f"shock radius {r_b} outside [r1, r2]")
    m, B, S_minus = _inlet_invariants(inlet, geometry, g)
    S_plus = _shock_entropy(r_b, m, B, S_minus, g)
    return float(solve_radial_state(geometry.r2, m, B, S_plus, SUBSONIC, g).P)


def exit_pressure_range(inlet: FlowState, geometry: NozzleGeometry,
                        g: GasConstants) -> ExitPressureRange:
    """Limiting exit pressures for a shock at the outlet (P1) and inlet (P2)."""
    P1 = exit_pressure_given_shock(geometry.r2, inlet, geometry, g)
    P2 = exit_pressure_given_shock(geometry.r1, inlet, geometry, g)
    return ExitPressureRange(P1, P2)


@dataclass(frozen=True)
class BackgroundSolution:
    gas: GasConstants
    geometry: NozzleGeometry
    r_b: float
    m: float
    B: float
    S_minus: float
    S_plus: float
    P_e: float
    pressure_range: ExitPressureRange
    shooting_iterations: int = 0
    table_size: int = 1024
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def r1(self):
        return self.geometry.r1

    @property
    def r2(self):
        return self.geometry.r2

    @property
    def kappa_b(self):
        """1/(r^2 rho U): constant on both branches."""
        return 1.0 / self.m

    def entropy(self, branch):
        return self.S_minus if branch == SUPERSONIC else self.S_plus

    def state(self, r, branch) -> FlowState:
        return solve_radial_state(r, self.m, self.B, self.entropy(branch), branch, self.gas)

    def profile(self, r, branch):
        """(U, rho, P, c^2) on a branch; arrays broadcast over r."""
        st = self.state(r, branch)
        S = self.entropy(branch)
        rho = density_from_PS(st.P, S, self.gas)
        return st.U1, rho, st.P, sound_speed_sq(st.P, S, self.gas)

    def derivatives(self, r, branch):
        """Analytic (U', P', P'') along a branch from the radial ODE."""
        r = np.asarray(r, dtype=float)
        U, rho, P, c2 = self.profile(r, branch)
        gm = self.gas.gamma
        D = c2 - U * U
        dU = -2.0 * U * c2 / (r * D)
        dP = 2.0 * gm * P * U * U / (r * D)
        dc2 = c2 * dP * (gm - 1.0) / (gm * P)
        d2P = dP * (dP / P + 2.0 * dU / U - 1.0 / r - (dc2 - 2.0 * U * dU) / D)
        return dU, dP, d2P

    @property
    def upstream_shock_state(self) -> FlowState:
        return self.state(self.r_b, SUPERSONIC)

    @property
    def downstream_shock_state(self) -> FlowState:
        return self.state(self.r_b, SUBSONIC)

    def table(self, branch):
        """Cached uniform table over [r1, r2] with columns r, U, rho, P, dP."""
        key = ("table", branch)
        if key not in self._cache:
            r = np.linspace(self.r1, self.r2, self.table_size)
            U, rho, P, _ = self.profile(r, branch)
            _, dP, _ = self.derivatives(r, branch)
            self._cache[key] = np.column_stack([r, U, rho, P, dP])
        return self._cache[key]

    @cached_property
    def shock_pressure_jump(self):
        return self.downstream_shock_state.P - self.upstream_shock_state.P


def shoot_shock_position(P_e: float, inlet: FlowState, geometry: NozzleGeometry,
                         g: GasConstants, tol: float = 1e-12,
                         table_size: int = 1024) -> BackgroundSolution:
    """Shock radius reproducing the exit pressure P_e, by bisection.

    ``tol`` bounds the width of the final bracket in r.
    """
    rng = exit_pressure_range(inlet, geometry, g)
    if not rng.contains(P_e):
        raise ExitPressureRangeError(P_e, rng.P1, rng.P2)
    m, B, S_minus = _inlet_invariants(inlet, geometry, g)
    lo, hi = geometry.r1, geometry.r2
    count = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        S_plus = _shock_entropy(mid, m, B, S_minus, g)
        P_mid = float(solve_radial_state(geometry.r2, m, B, S_plus, SUBSONIC, g).P)
        count += 1
        # exit pressure decreases with the shock radius
        if P_mid > P_e:
            lo = mid
        else:
            hi = mid
    r_b = 0.5 * (lo + hi)
    return BackgroundSolution(
        gas=g,
        geometry=geometry,
        r_b=r_b,
        m=m,
        B=B,
        S_minus=S_minus,
        S_plus=_shock_entropy(r_b, m, B, S_minus, g),
        P_e=P_e,
        pressure_range=rng,
        shooting_iterations=count,
        table_size=table_size,
    )
