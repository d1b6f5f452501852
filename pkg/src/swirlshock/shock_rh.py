"""Rankine-Hugoniot relations on the shock trace in Lagrangian form.

With the shock written as ``y1 = psi(y2)`` the jump conditions read

    [1/(rho U1)] + q [varpi]            = 0
    [U1 + P/(rho U1)] + q [P varpi]     = 0
    q = [U2]/[P] = psi' psi sin(theta)/(2 y2)
    [U3] = 0,  [B] = 0

where ``varpi = U2/U1``.  Given the upstream state, the downstream flow angle,
swirl and Bernoulli constant, the first two relations fix (P, S); the third
one is the shock slope.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .background import SUBSONIC, SUPERSONIC, BackgroundSolution
from .gas import GasConstants


class JumpSolveError(RuntimeError):
    pass


class BranchError(JumpSolveError):
    pass


class DegenerateShockError(RuntimeError):
    pass


class CoefficientError(RuntimeError):
    pass


def _rho(P, S, g: GasConstants):
    return (P * np.exp(-S / g.c_v) / g.A) ** (1.0 / g.gamma)


def downstream_velocity(P, S, B, U3, varpi, g: GasConstants):
    """U1 from the Bernoulli relation; complex inputs are allowed."""
    rho = _rho(P, S, g)
    h = g.gamma / (g.gamma - 1.0) * P / rho
    return np.sqrt((2.0 * B - U3 * U3 - 2.0 * h) / (1.0 + varpi * varpi))


def _jump_residuals(P, S, up, varpi, U3, B, g):
    """Scaled residuals of the two mass/momentum relations."""
    U1m, U2m, _, Pm, Sm = up
    rho_m = _rho(Pm, Sm, g)
    u1 = downstream_velocity(P, S, B, U3, varpi, g)
    rho = _rho(P, S, g)
    varpi_m = U2m / U1m
    q = (varpi * u1 - U2m) / (P - Pm)
    r1 = (1.0 / (rho * u1) - 1.0 / (rho_m * U1m)) + q * (varpi - varpi_m)
    r2 = (u1 + P / (rho * u1)) - (U1m + Pm / (rho_m * U1m)) + q * (P * varpi - Pm * varpi_m)
    # scale to order one
    return r1 * (rho_m * U1m), r2 / U1m


def solve_rh_trace(upstream, varpi, U3, B, g: GasConstants, guess=None,
                   tol: float = 1e-13, max_iter: int = 50):
    """Downstream (P, S) solving the jump relations, vectorized over trace points.

    ``upstream`` is an array (5, ...) of (U1, U2, U3, P, S) ahead of the shock.
    ``guess`` is a (P, S) starting point, normally the background downstream
    state or the previous iterate.
    """
    up = np.asarray(upstream, dtype=float)
    varpi = np.asarray(varpi, dtype=float) + 0.0 * up[0]
    U3 = np.asarray(U3, dtype=float) + 0.0 * up[0]
    B = np.asarray(B, dtype=float) + 0.0 * up[0]
    if guess is None:
        raise ValueError("solve_rh_trace needs an initial guess (background downstream state)")
    P = np.array(guess[0], dtype=float) + 0.0 * up[0]
    S = np.array(guess[1], dtype=float) + 0.0 * up[0]
    hc = 1e-30
    polish = False
    for it in range(max_iter):
        r1, r2 = _jump_residuals(P, S, up, varpi, U3, B, g)
        nrm = np.maximum(np.abs(r1), np.abs(r2))
        if polish:
            break
        # one extra Newton step once converged drives the error to round-off
        polish = bool(np.all(nrm < tol))
        # exact Jacobian by complex-step differentiation
        a1, a2 = _jump_residuals(P + 1j * hc * P, S + 0j, up, varpi, U3, B, g)
        b1, b2 = _jump_residuals(P + 0j, S + 1j * hc, up, varpi, U3, B, g)
        J11, J21 = a1.imag / (hc * P), a2.imag / (hc * P)
        J12, J22 = b1.imag / hc, b2.imag / hc
        det = J11 * J22 - J12 * J21
        dP = -(J22 * r1 - J12 * r2) / det
        dS = -(-J21 * r1 + J11 * r2) / det
        # halve the step while the residual grows
        lam = 1.0
        for _ in range(8):
            Pn, Sn = P + lam * dP, S + lam * dS
            if np.all(Pn > 0):
                # trial states past the stagnation enthalpy are rejected as non-finite
                with np.errstate(invalid="ignore"):
                    t1, t2 = _jump_residuals(Pn, Sn, up, varpi, U3, B, g)
                if np.all(np.isfinite(t1)) and np.max(np.maximum(np.abs(t1), np.abs(t2))) <= np.max(nrm):
                    break
            lam *= 0.5
        P, S = P + lam * dP, S + lam * dS
    else:
        raise JumpSolveError(f"jump relations not solved in {max_iter} Newton steps")
    u1 = downstream_velocity(P, S, B, U3, varpi, g)
    c2 = g.gamma * P / _rho(P, S, g)
    if np.any(u1 * u1 * (1.0 + varpi * varpi) >= c2):
        raise BranchError("jump solve landed on a supersonic downstream state")
    return P, S


def jump_residuals_full(downstream, upstream, psi, dpsi, y2, theta, g: GasConstants):
    """All five Lagrangian jump relations for given states on both sides.

    ``downstream`` and ``upstream`` are arrays (5, n) of (U1, U2, U3, P, S).
    Residuals are scaled by background-size quantities.
    """
    d = np.asarray(downstream)
    u = np.asarray(upstream)
    rho_p, rho_m = _rho(d[3], d[4], g), _rho(u[3], u[4], g)
    w = psi * dpsi * np.sin(theta) / (2.0 * y2)
    vp, vm = d[1] / d[0], u[1] / u[0]
    hp = g.gamma / (g.gamma - 1.0) * d[3] / rho_p
    hm = g.gamma / (g.gamma - 1.0) * u[3] / rho_m
    Bp = 0.5 * (d[0] ** 2 + d[1] ** 2 + d[2] ** 2) + hp
    Bm = 0.5 * (u[0] ** 2 + u[1] ** 2 + u[2] ** 2) + hm
    r = np.empty((5,) + np.shape(psi))
    r[0] = ((1.0 / (rho_p * d[0]) - 1.0 / (rho_m * u[0])) + w * (vp - vm)) * rho_m * u[0]
    r[1] = ((d[0] + d[3] / (rho_p * d[0])) - (u[0] + u[3] / (rho_m * u[0]))
            + w * (d[3] * vp - u[3] * vm)) / u[0]
    r[2] = ((d[1] - u[1]) - w * (d[3] - u[3])) / u[0]
    r[3] = (d[2] - u[2]) / u[0]
    r[4] = (Bp - Bm) / Bm
    return r


def shock_ode_rhs(U2_plus, U2_minus, P_plus, P_minus, psi, theta, y2, jump_floor):
    """Shock slope psi'(y2) = (2 y2/sin theta)(U2+ - U2-)/(psi (P+ - P-)).

    ``jump_floor`` is the smallest admissible pressure jump.  At y2 = 0 the
    slope is 0 by symmetry.
    """
    dP = np.asarray(P_plus) - np.asarray(P_minus)
    if np.any(np.abs(dP) < jump_floor):
        raise DegenerateShockError("pressure jump across the shock below threshold")
    y2 = np.asarray(y2, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(y2 > 0.0, 2.0 * y2 / np.sin(np.where(y2 > 0.0, theta, 1.0)), 0.0)
    return fac * (np.asarray(U2_plus) - np.asarray(U2_minus)) / (psi * dP)


@dataclass(frozen=True)
class LinearJumpCoefficients:
    e1: float
    e2: float
    a: float
    a11: float
    a12: float
    a21: float
    a22: float
    condition: float
    validation: dict

    @property
    def matrix(self):
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])


def taylor_matrix(U, P, c2, g: GasConstants):
    """Derivatives of (rho U, rho U^2 + P) in (P, S) at fixed Bernoulli constant."""
    cv, gm = g.c_v, g.gamma
    a11 = (U * U - c2) / (U * c2)
    a12 = -(U * U + c2 / (gm - 1.0)) * P / (cv * U * c2)
    a21 = (U * U - c2) / c2
    a22 = -(U * U + 2.0 * c2 / (gm - 1.0)) * P / (cv * c2)
    return a11, a12, a21, a22


def background_trace_guess(bg: BackgroundSolution):
    st = bg.downstream_shock_state
    return st.P, bg.S_plus


def linear_jump_coefficients(bg: BackgroundSolution, rtol: float = 1e-6) -> LinearJumpCoefficients:
    """Linearized jump slopes (e1, e2), shock-slope factor a and Taylor matrix.

    Each value is checked against a centred finite difference of the exact
    jump solve; a mismatch raises CoefficientError.
    """
    g = bg.gas
    r_b = bg.r_b
    Um, rho_m, Pm, _ = bg.profile(r_b, SUPERSONIC)
    Up, rho_p, Pp, c2p = bg.profile(r_b, SUBSONIC)
    Um, rho_m, Pm, Up, rho_p, Pp, c2p = map(float, (Um, rho_m, Pm, Up, rho_p, Pp, c2p))
    a11, a12, a21, a22 = taylor_matrix(Up, Pp, c2p, g)
    mat = np.array([[a11, a12], [a21, a22]])
    rhs = np.array([-2.0 * rho_m * Um / r_b, -2.0 * rho_m * Um * Um / r_b])
    e1, e2 = np.linalg.solve(mat, rhs)
    a = Up / (r_b * (Pp - Pm))

    # finite-difference validation
    h = 1e-5 * (bg.r2 - bg.r1)
    guess = background_trace_guess(bg)
    vals = []
    for rr in (r_b - h, r_b + h):
        st = bg.state(rr, SUPERSONIC)
        up = np.array([st.U1, 0.0, 0.0, st.P, bg.S_minus])
        vals.append(solve_rh_trace(up, 0.0, 0.0, bg.B, g, guess=guess))
    fd_e1 = float((vals[1][0] - vals[0][0]) / (2 * h))
    fd_e2 = float((vals[1][1] - vals[0][1]) / (2 * h))
    # shock slope against the downstream flow angle at a sample ordinate
    kappa = bg.kappa_b
    y2 = 0.5 * np.sqrt((1.0 - np.cos(bg.geometry.theta0)) / kappa)
    th = np.arccos(1.0 - kappa * y2 * y2)
    dv = 1e-6
    slopes = [shock_ode_rhs(Up * s * dv, 0.0, Pp, Pm, r_b, th, y2, 0.0) for s in (-1.0, 1.0)]
    d1 = np.sin(th) / (2.0 * y2)
    fd_a = float((slopes[1] - slopes[0]) / (2 * dv) * d1)
    # Taylor matrix against differences of the mass/momentum fluxes
    def fluxes(P, S):
        u = float(downstream_velocity(P, S, bg.B, 0.0, 0.0, g))
        rho = float(_rho(P, S, g))
        return np.array([rho * u, rho * u * u + P])
    hp, hs = 1e-6 * Pp, 1e-6
    dF_dP = (fluxes(Pp + hp, bg.S_plus) - fluxes(Pp - hp, bg.S_plus)) / (2 * hp)
    dF_dS = (fluxes(Pp, bg.S_plus + hs) - fluxes(Pp, bg.S_plus - hs)) / (2 * hs)
    checks = {
        "e1": (e1, fd_e1), "e2": (e2, fd_e2), "a": (a, fd_a),
        "a11": (a11, dF_dP[0]), "a12": (a12, dF_dS[0]),
        "a21": (a21, dF_dP[1]), "a22": (a22, dF_dS[1]),
    }
    validation = {}
    for name, (val, fd) in checks.items():
        rel = abs(val - fd) / max(abs(fd), 1e-300)
        validation[name] = {"value": float(val), "finite_difference": float(fd), "rel_error": float(rel)}
        if rel > rtol:
            raise CoefficientError(f"coefficient {name}: formula {val!r} vs finite difference {fd!r}")
    return LinearJumpCoefficients(e1=float(e1), e2=float(e2), a=float(a), a11=a11, a12=a12,
                                  a21=a21, a22=a22, condition=float(np.linalg.cond(mat)),
                                  validation=validation)


def closed_form_e2(bg: BackgroundSolution):
    """Closed form 2(gamma-1)c_v rho^- U^- (U^- - U^+)/(r_b P^+) for e2."""
    g = bg.gas
    Um, rho_m, _, _ = bg.profile(bg.r_b, SUPERSONIC)
    Up, _, Pp, _ = bg.profile(bg.r_b, SUBSONIC)
    return float(2.0 * (g.gamma - 1.0) * g.c_v * rho_m * Um * (Um - Up) / (bg.r_b * Pp))


def integrate_from_wall(values, h, wall_value=None):
    """Trapezoid integral from each cell centre to the wall, int_{z2}^{M}.

    ``values`` are sampled at cell centres (last axis); the wall value is
    extrapolated quadratically when not supplied.
    """
    v = np.asarray(values, dtype=float)
    if wall_value is None:
        wall_value = (15.0 * v[..., -1] - 10.0 * v[..., -2] + 3.0 * v[..., -3]) / 8.0
    last = 0.25 * h * (v[..., -1] + wall_value)
    seg = 0.5 * h * (v[..., 1:] + v[..., :-1])
    tail = np.cumsum(seg[..., ::-1], axis=-1)[..., ::-1]
    out = np.empty_like(v)
    out[..., -1] = last
    out[..., :-1] = tail + last[..., None]
    return out


@dataclass(frozen=True)
class TraceRemainders:
    P_jump: np.ndarray      # exact downstream pressure from the jump solve
    S_jump: np.ndarray
    slope: np.ndarray       # exact shock slope psi'
    R3: np.ndarray
    R4: np.ndarray
    R11: np.ndarray
    R12: np.ndarray

    @property
    def R5(self):
        return self.R3


def trace_remainders(bg: BackgroundSolution, coeffs: LinearJumpCoefficients, upstream,
                     W1_0, W2_0, W4_0, W6, theta_0, z2, h2, d1, jump_floor, guess=None):
    """Exact-minus-linear remainders on the shock trace.

    ``upstream`` is (5, n2) sampled at (psi, z2); the W arguments are the
    trace values at z1 = 0 of the iterate.  Returns a TraceRemainders.
    """
    g = bg.gas
    Up_b, _, Pp_b, _ = bg.profile(bg.r_b, SUBSONIC)
    up = np.asarray(upstream)
    hm = g.gamma / (g.gamma - 1.0) * up[3] / _rho(up[3], up[4], g)
    Bm = 0.5 * (up[0] ** 2 + up[1] ** 2 + up[2] ** 2) + hm
    if guess is None:
        guess = (np.full_like(z2, Pp_b), np.full_like(z2, bg.S_plus))
    P_jump, S_jump = solve_rh_trace(up, W2_0, up[2], Bm, g, guess=guess)
    R3 = P_jump - Pp_b - coeffs.e1 * W6
    R4 = S_jump - bg.S_plus - coeffs.e2 * W6
    U1_0 = Up_b + W1_0
    slope = shock_ode_rhs(U1_0 * W2_0, up[1], Pp_b + W4_0, up[3], bg.r_b + W6, theta_0, z2, jump_floor)
    R11 = slope - coeffs.a * W2_0 / d1
    R12 = -integrate_from_wall(R11, h2)
    return TraceRemainders(P_jump, S_jump, slope, R3, R4, R11, R12)
