"""Fixed-point iteration for the subsonic region behind the shock.

Unknowns live on the rectangle (0, N) x (0, M) of the fixed domain, where
z1 = 0 is the shock and z2 the Lagrangian ordinate.  The perturbation of the
downstream flow from the radial background is

    W1 = U1 - U_b,  W2 = varpi = U2/U1,  W3 = U3,  W4 = P - P_b,  W5 = S - S_b+

together with the shock displacement W6(z2) = psi(z2) - r_b.  One step of the
map solves a linear elliptic problem for (W2, W4, W6(M)) through a potential
function and updates the remaining unknowns by transport along streamlines.
All right-hand sides are written as [linear operator at the iterate] minus
[full nonlinear residual at the iterate], so the map is a contraction with
ratio proportional to the size of the perturbation.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.integrate import cumulative_simpson, quad
from scipy.sparse.linalg import LinearOperator, onenormest, splu

from .background import (SUBSONIC, SUPERSONIC, BackgroundSolution, d1_coefficient,
                         d2_coefficient)
from .gas import enthalpy
from .lagrangian import FixedDomain, angle_table, extend_grid
from .shock_rh import (LinearJumpCoefficients, _rho, integrate_from_wall,
                       linear_jump_coefficients, trace_remainders)

log = logging.getLogger(__name__)


class SubsonicIterationError(RuntimeError):
    pass


class CoefficientValidationError(SubsonicIterationError):
    def __init__(self, symbol, value, reference):
        super().__init__(f"coefficient {symbol}: formula {value!r} vs finite-difference "
                         f"linearization {reference!r}")
        self.symbol = symbol


class PotentialSolveError(SubsonicIterationError):
    pass


class ContractionError(SubsonicIterationError):
    """The iteration stopped contracting; try a smaller epsilon or a finer grid."""


class TrustRegionError(ContractionError):
    pass


class NonConvergenceError(SubsonicIterationError):
    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


# ---------------------------------------------------------------------------
# pointwise residual of the subsonic system


def lagrangian_residuals(g, z1, N, r_b, W6, dW6, theta, z2, varpi, dvarpi1, dvarpi2,
                         P, dP1, dP2, S, U3, B):
    """Residuals (N1, N2) of the flow-angle/pressure system in fixed coordinates.

    Derivatives are taken in (z1, z2); the chain rule to the Lagrangian
    coordinates (y1, y2) uses ``y1 = r_b + z1 + (N - z1) W6/N`` and
    ``y2 = z2``.  U1 comes from the Bernoulli relation.
    """
    y1 = r_b + z1 + (N - z1) * W6 / N
    J = N / (N - W6)
    K = dW6 * (z1 - N) / (N - W6)
    v1 = J * dvarpi1
    v2 = dvarpi2 + K * dvarpi1
    p1 = J * dP1
    p2 = dP2 + K * dP1
    rho = _rho(P, S, g)
    c2 = g.gamma * P / rho
    h = c2 / (g.gamma - 1.0)
    U1 = np.sqrt((2.0 * (B - h) - U3 * U3) / (1.0 + varpi * varpi))
    D = c2 - U1 * U1
    sn = np.sin(theta)
    ct = np.cos(theta) / sn
    w = sn / (2.0 * z2)
    N1 = (v1 - y1 * rho * U1 * varpi * w * v2 - varpi / y1 - varpi * varpi * ct / y1
          + y1 * w / U1 * p2 - varpi / (rho * c2) * p1 - U3 * U3 * ct / (y1 * U1 * U1))
    k = rho * c2 / (y1 * D)
    N2 = (p1 - k * U1 * U1 * y1 * y1 * rho * U1 * w * v2 - y1 * rho * c2 * U1 * varpi * w / D * p2
          - k * U1 * U1 * (varpi * varpi + varpi * ct + 2.0) - k * U3 * U3)
    return N1, N2


# ---------------------------------------------------------------------------
# linear coefficients


def _pointwise(bg: BackgroundSolution, z1, N):
    """Background-dependent pointwise coefficients at fixed-domain abscissae z1."""
    g = bg.gas
    r = bg.r_b + np.asarray(z1, dtype=float)
    U, rho, P, c2 = bg.profile(r, SUBSONIC)
    dU, dP, d2P = bg.derivatives(r, SUBSONIC)
    D = c2 - U * U
    gm = g.gamma
    gg = 2.0 * gm * P * U * U / (r * D)
    hS = c2 / ((gm - 1.0) * gm * g.c_v)
    out = dict(r=r, U=U, rho=rho, P=P, c2=c2, dU=dU, dP=dP, d2P=d2P)
    out["alpha1"] = (c2 + U * U) / (r * D)
    out["beta1"] = r / U
    out["beta2"] = gm * P * U * U * bg.m / (r * D)
    out["e3"] = gg * (2.0 / (U * U) + 2.0 / D)
    out["e4"] = -gg * (1.0 / P - 2.0 / (rho * U * U) - (gm + 1.0) / (rho * D))
    out["e5"] = gg * hS * (2.0 / (U * U) + (gm + 1.0) / D)
    out["e6_tilde"] = gg * (N - np.asarray(z1)) / (N * r)
    out["e6"] = out["e6_tilde"] + dP / N
    return out


def _cumulative(bg, N, z_out, key, refine=8):
    """int_0^z of a pointwise coefficient on a refined grid (cumulative Simpson)."""
    n = (len(z_out) - 1) * refine
    zf = np.linspace(0.0, N, n + 1)
    vals = _pointwise(bg, zf, N)[key]
    cum = cumulative_simpson(vals, x=zf, initial=0.0)
    return cum[::refine]


@dataclass(frozen=True)
class LinearOperatorCoefficients:
    """Coefficient tables of the linearized subsonic problem.

    Nodal arrays have length n1 + 1; ``a1_face`` is sampled at the n1 cell
    midpoints in z1; ``d1``/``d2`` at the z2 cell centres.
    """

    domain: FixedDomain
    r_b: float
    kappa: float
    jump: LinearJumpCoefficients
    background: dict
    alpha1: np.ndarray
    beta1: np.ndarray
    beta2: np.ndarray
    e3: np.ndarray
    e4: np.ndarray
    e5: np.ndarray
    e6: np.ndarray
    e6_tilde: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    lambda3: np.ndarray
    lambda4: np.ndarray
    lambda5: np.ndarray
    lambda6: np.ndarray
    a1: np.ndarray
    a1_face: np.ndarray
    a2: np.ndarray
    a3: np.ndarray
    a4: float
    d1: np.ndarray
    d2: np.ndarray
    d1_wall: float
    validation: dict = field(default_factory=dict, repr=False)

    @property
    def a(self):
        return self.jump.a

    @property
    def e1(self):
        return self.jump.e1

    @property
    def e2(self):
        return self.jump.e2

    def sign_report(self):
        """The sign pattern required by the existence theory."""
        return {
            "lambda1>0": bool(np.all(self.lambda1 > 0)),
            "lambda2>0": bool(np.all(self.lambda2 > 0)),
            "lambda4>0": bool(np.all(self.lambda4 > 0)),
            "lambda3<=0": bool(np.all(self.lambda3 <= 0)),
            "e3>0": bool(np.all(self.e3 > 0)),
            "e4>0": bool(np.all(self.e4 > 0)),
            "e5>0": bool(np.all(self.e5 > 0)),
        }


def _tables(bg, jump, z, N, logl1, logl4):
    pw = _pointwise(bg, z, N)
    a = jump.a
    q = (z - N) / N
    l1 = np.exp(logl1)
    l4 = np.exp(logl4)
    l2 = l1 * pw["beta1"]
    l3 = a * l2 * q * pw["dP"]
    l5 = pw["beta2"] * l4
    l6 = (pw["e6"] + jump.e2 * pw["e5"]) * l4
    dq = a * l4 * (pw["e4"] * q * pw["dP"] + pw["dP"] / N + q * pw["d2P"])
    return pw, dict(lambda1=l1, lambda2=l2, lambda3=l3, lambda4=l4, lambda5=l5, lambda6=l6,
                    a1=l4 / l2, a2=l5 / l1, a3=dq - a * l6)


def assemble_coefficients(bg: BackgroundSolution, domain: FixedDomain,
                          jump: LinearJumpCoefficients | None = None,
                          rtol: float = 1e-5, validate: bool = True) -> LinearOperatorCoefficients:
    """Tabulate and cross-validate the coefficients of the linear problem."""
    if jump is None:
        jump = linear_jump_coefficients(bg)
    N, n1 = domain.N, domain.n1
    zf = np.linspace(0.0, N, 2 * n1 + 1)
    logl1 = -_cumulative(bg, N, zf, "alpha1")
    logl4 = _cumulative(bg, N, zf, "e4")
    pw, lam = _tables(bg, jump, zf, N, logl1, logl4)
    node = slice(0, None, 2)
    kappa = bg.kappa_b
    d1 = d1_coefficient(domain.z2, kappa)
    d2 = d2_coefficient(domain.z2, kappa)
    l = {k: v[node] for k, v in lam.items()}
    a4 = float(l["lambda3"][0] + jump.a * l["lambda2"][0] * jump.e1)
    coeffs = LinearOperatorCoefficients(
        domain=domain, r_b=bg.r_b, kappa=kappa, jump=jump,
        background={k: pw[k][node] for k in ("r", "U", "rho", "P", "c2", "dU", "dP", "d2P")},
        alpha1=pw["alpha1"][node], beta1=pw["beta1"][node], beta2=pw["beta2"][node],
        e3=pw["e3"][node], e4=pw["e4"][node], e5=pw["e5"][node], e6=pw["e6"][node],
        e6_tilde=pw["e6_tilde"][node],
        a1_face=lam["a1"][1::2], a4=a4, d1=d1, d2=d2,
        d1_wall=float(d1_coefficient(domain.M, kappa)), **l)
    if validate:
        object.__setattr__(coeffs, "validation", validate_coefficients(bg, coeffs, rtol))
    return coeffs


def _record(report, name, value, reference, rtol, scale=None):
    value = np.atleast_1d(np.asarray(value, dtype=float))
    reference = np.atleast_1d(np.asarray(reference, dtype=float))
    scale = np.max(np.abs(reference)) if scale is None else scale
    err = float(np.max(np.abs(value - reference)) / max(scale, 1e-300))
    report[name] = {"rel_error": err, "tolerance": rtol, "passed": err < rtol}
    if not err < rtol:
        raise CoefficientValidationError(name, value.tolist()[:4], reference.tolist()[:4])


def validate_coefficients(bg: BackgroundSolution, coeffs: LinearOperatorCoefficients,
                          rtol: float = 1e-5) -> dict:
    """Compare every coefficient with a finite-difference linearization.

    The linear coefficients are derivatives of ``lagrangian_residuals`` at
    the background; the integrating factors are compared with adaptive
    quadrature of their exponents and ``a3`` with a difference quotient of
    ``lambda4 lambda3 / lambda2``.
    """
    g = bg.gas
    dom = coeffs.domain
    N = dom.N
    z1 = dom.z1[:, None]
    z2 = dom.z2[[0, dom.n2 // 2, dom.n2 - 1]][None, :]
    bgd = coeffs.background
    Pb = bgd["P"][:, None]
    dPb = bgd["dP"][:, None]
    th = np.arccos(1.0 - coeffs.kappa * z2 ** 2)
    zero = np.zeros(np.broadcast(z1, z2).shape)
    base = dict(W6=zero, dW6=zero, theta=th + zero, varpi=zero, dvarpi1=zero, dvarpi2=zero,
                P=Pb + zero, dP1=dPb + zero, dP2=zero, S=bg.S_plus + zero, U3=zero,
                B=bg.B + zero)

    def jac(name, which, step):
        out = []
        for s in (1.0, -1.0):
            args = dict(base)
            args[name] = base[name] + s * step
            out.append(lagrangian_residuals(g, z1, N, bg.r_b, z2=z2, **args)[which])
        return (out[0] - out[1]) / (2.0 * step)

    r0 = lagrangian_residuals(g, z1, N, bg.r_b, z2=z2, **base)
    rep = {}
    _record(rep, "background residual", np.concatenate([r0[0].ravel(), r0[1].ravel()]),
            0.0, rtol, scale=float(np.max(np.abs(dPb))))
    h = 1e-6
    d1 = np.sin(th) / (2.0 * z2)
    q = (z1 - N) / N
    a1 = coeffs.alpha1[:, None]
    b1 = coeffs.beta1[:, None]
    b2 = coeffs.beta2[:, None]
    _record(rep, "alpha1", -jac("varpi", 0, h), a1 + zero, rtol)
    _record(rep, "beta1", jac("dP2", 0, h), b1 * d1 + zero, rtol)
    _record(rep, "shock-slope coupling", jac("dW6", 0, h),
            b1 * d1 * q * dPb + zero, rtol, scale=float(np.max(np.abs(b1 * d1 * dPb))))
    _record(rep, "beta2", -jac("dvarpi2", 1, h), b2 * d1 + zero, rtol)
    _record(rep, "d2", -jac("varpi", 1, h), b2 * coeffs.kappa * np.cos(th) / np.sin(th) + zero, rtol)
    _record(rep, "e3", -jac("B", 1, h), coeffs.e3[:, None] + zero, rtol)
    _record(rep, "e4", jac("P", 1, h * float(np.max(Pb))), coeffs.e4[:, None] + zero, rtol)
    _record(rep, "e5", jac("S", 1, h), coeffs.e5[:, None] + zero, rtol)
    _record(rep, "e6", jac("W6", 1, h), coeffs.e6[:, None] + zero, rtol)
    _record(rep, "d1 closed form", coeffs.d1, np.sin(np.arccos(1 - coeffs.kappa * dom.z2 ** 2))
            / (2.0 * dom.z2), rtol)

    # integrating factors against adaptive quadrature
    probes = np.array([0.3, 0.7, 1.0]) * N
    l1q, l4q = [], []
    for zp in probes:
        l1q.append(math.exp(-quad(lambda z: float(_pointwise(bg, z, N)["alpha1"]), 0.0, zp,
                                  epsabs=1e-13, epsrel=1e-12)[0]))
        l4q.append(math.exp(quad(lambda z: float(_pointwise(bg, z, N)["e4"]), 0.0, zp,
                                 epsabs=1e-13, epsrel=1e-12)[0]))
    l1i = np.interp(probes, dom.z1, coeffs.lambda1)
    l4i = np.interp(probes, dom.z1, coeffs.lambda4)
    # probes are grid nodes whenever n1 is a multiple of 10; otherwise the
    # linear interpolation error is O(h^2) and the comparison uses exact nodes
    idx = np.round(probes / dom.h1).astype(int)
    if np.allclose(idx * dom.h1, probes):
        l1i, l4i = coeffs.lambda1[idx], coeffs.lambda4[idx]
        _record(rep, "lambda1", l1i, l1q, rtol)
        _record(rep, "lambda4", l4i, l4q, rtol)
    else:
        exact = dom.z1[np.clip(idx, 0, dom.n1)]
        l1x, l4x = [], []
        for zp in exact:
            l1x.append(math.exp(-quad(lambda z: float(_pointwise(bg, z, N)["alpha1"]), 0.0, zp,
                                      epsabs=1e-13, epsrel=1e-12)[0]))
            l4x.append(math.exp(quad(lambda z: float(_pointwise(bg, z, N)["e4"]), 0.0, zp,
                                     epsabs=1e-13, epsrel=1e-12)[0]))
        sel = np.clip(idx, 0, dom.n1)
        _record(rep, "lambda1", coeffs.lambda1[sel], l1x, rtol)
        _record(rep, "lambda4", coeffs.lambda4[sel], l4x, rtol)
    _record(rep, "lambda1(0)=1", coeffs.lambda1[0], 1.0, 1e-14)
    _record(rep, "lambda4(0)=1", coeffs.lambda4[0], 1.0, 1e-14)

    # a3 against a difference quotient of lambda4 lambda3 / lambda2
    i = dom.n1 // 2
    zc = dom.z1[i]
    dz = 1e-4 * N
    vals = []
    for zz in (zc - dz, zc + dz):
        pw = _pointwise(bg, zz, N)
        l4 = coeffs.lambda4[i] * math.exp(quad(lambda z: float(_pointwise(bg, z, N)["e4"]), zc, zz,
                                                epsabs=1e-15, epsrel=1e-13)[0])
        vals.append(l4 * coeffs.a * (zz - N) / N * float(pw["dP"]))
    fd = (vals[1] - vals[0]) / (2 * dz) - coeffs.a * coeffs.lambda6[i]
    _record(rep, "a3", coeffs.a3[i], fd, rtol, scale=max(abs(fd), abs(coeffs.a * coeffs.lambda6[i])))
    _record(rep, "a1", coeffs.a1, coeffs.lambda4 / coeffs.lambda2, 1e-12)
    _record(rep, "a2", coeffs.a2, coeffs.lambda5 / coeffs.lambda1, 1e-12)
    _record(rep, "a4", coeffs.a4, coeffs.lambda3[0] + coeffs.a * coeffs.lambda2[0] * coeffs.e1, 1e-12)
    return rep


# ---------------------------------------------------------------------------
# potential problem


@dataclass
class PotentialOperator:
    coeffs: LinearOperatorCoefficients
    matrix: sp.csc_matrix
    lu: object
    condition_estimate: float
    assembly_time: float


def _axis_wall_stencils(domain: FixedDomain):
    s = domain.z2
    sf = (np.arange(domain.n2) + 1.0) * domain.h2
    return s, sf


def assemble_potential(coeffs: LinearOperatorCoefficients) -> PotentialOperator:
    """Sparse matrix of the potential problem and its LU factorization.

    Rows are indexed by i * n2 + j (i along z1, j along z2).  Interior rows
    carry the divergence-form operator plus the nonlocal coupling
    ``a3(z1) Y(0, s)`` to the shock-trace unknowns; the first and last rows
    in z1 hold the Robin and Neumann conditions.
    """
    t0 = time.perf_counter()
    dom = coeffs.domain
    n1, n2, h1, h2 = dom.n1, dom.n2, dom.h1, dom.h2
    kap = coeffs.kappa
    s, sf = _axis_wall_stencils(dom)
    d1c = d1_coefficient(s, kap)
    d1f = d1_coefficient(sf, kap)
    idx = np.arange((n1 + 1) * n2).reshape(n1 + 1, n2)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        r, c, v = np.broadcast_arrays(r, c, v)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(np.asarray(v, dtype=float).ravel())

    I = np.arange(1, n1)[:, None]
    J = np.arange(n2)[None, :]
    row = idx[1:n1]
    a1f = coeffs.a1_face
    add(row, idx[I + 1, J], a1f[I] / h1 ** 2)
    add(row, idx[I - 1, J], a1f[I - 1] / h1 ** 2)
    add(row, row, -(a1f[I] + a1f[I - 1]) / h1 ** 2)
    a2 = coeffs.a2[1:n1, None]
    # radial flux part: (d1/s) d/ds (s d1 dY/ds)
    pre = a2 * (d1c / s)[None, :] / h2 ** 2
    up = np.where(J < n2 - 1, sf * d1f, 0.0)[None, :] * np.ones_like(a2)
    dn = np.where(J > 0, np.roll(sf * d1f, 1), 0.0)[None, :] * np.ones_like(a2)
    Jp = np.minimum(J + 1, n2 - 1)
    Jm = np.maximum(J - 1, 0)
    add(row, idx[I, Jp], pre * up)
    add(row, idx[I, Jm], pre * dn)
    add(row, row, -pre * (up + dn))
    # first-order term -(kappa^2/4) s dY/ds, axis ghost even, wall ghost from the flux data
    c1 = -a2 * (kap ** 2 / 4.0) * s[None, :] / (2.0 * h2)
    Jp_g = np.where(J < n2 - 1, J + 1, J)
    Jm_g = np.where(J > 0, J - 1, J)
    add(row, idx[I, Jp_g], c1 * np.ones_like(a2))
    add(row, idx[I, Jm_g], -c1 * np.ones_like(a2))
    # nonlocal trace coupling
    add(row, idx[0, J] + 0 * I, coeffs.a3[1:n1, None] * np.ones((1, n2)))
    # Robin condition on the shock
    jj = np.arange(n2)
    add(idx[0], idx[0], -1.5 / h1 + coeffs.a4)
    add(idx[0], idx[1, jj], 2.0 / h1)
    add(idx[0], idx[2, jj], -0.5 / h1)
    # Neumann condition at the exit
    add(idx[n1], idx[n1], 1.5 / h1)
    add(idx[n1], idx[n1 - 1, jj], -2.0 / h1)
    add(idx[n1], idx[n1 - 2, jj], 0.5 / h1)
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(idx.size, idx.size))
    expected = idx.size + 6 * (n1 - 1) * n2 + 4 * n2
    if A.nnz > expected:
        raise PotentialSolveError(f"unexpected sparsity: {A.nnz} nonzeros > {expected}")
    try:
        lu = splu(A)
    except RuntimeError as exc:
        raise PotentialSolveError(f"potential matrix is singular ({idx.size} unknowns, "
                                  f"{A.nnz} nonzeros): {exc}") from exc
    inv = LinearOperator(A.shape, matvec=lu.solve, rmatvec=lambda x: lu.solve(x, trans="T"))
    # the estimator draws random sign vectors; a fixed seed keeps outputs reproducible
    state = np.random.get_state()
    np.random.seed(0)
    try:
        cond = float(onenormest(A) * onenormest(inv))
    except Exception:  # the estimator is a diagnostic only
        cond = float("nan")
    finally:
        np.random.set_state(state)
    if not np.isfinite(cond) or cond > 1e14:
        log.warning("potential matrix condition estimate %.3g", cond)
    else:
        log.debug("potential matrix: %d unknowns, condition estimate %.3g", idx.size, cond)
    return PotentialOperator(coeffs, A, lu, cond, time.perf_counter() - t0)


@dataclass(frozen=True)
class PotentialSolution:
    phi: np.ndarray        # normalized so that phi(0, M) = 0
    mu: float              # trace value Y(0, M)
    upsilon: np.ndarray    # unnormalized potential

    @property
    def shape(self):
        return self.phi.shape


def wall_trace_value(Y, g3, h2):
    """Y at z2 = M from the last two cell values and the wall slope."""
    return (9.0 * Y[..., -1] - Y[..., -2]) / 8.0 + 3.0 * h2 * np.asarray(g3) / 8.0


def solve_potential(op: PotentialOperator, F1=None, F2=None, G1=None, G2=None, G3=None,
                    source=None) -> PotentialSolution:
    """Solve the lifted potential problem.

    ``F1`` and ``F2`` are flux data whose z1/s divergence enters the right
    side, ``source`` is an additional volume term, ``G1`` the Robin data on
    the shock (length n2), ``G2`` the Neumann data at the exit (length n2)
    and ``G3`` the wall slope dY/ds(z1, M) (length n1 + 1).
    """
    c = op.coeffs
    dom = c.domain
    n1, n2, h1, h2 = dom.n1, dom.n2, dom.h1, dom.h2
    shape = dom.shape
    rhs = np.zeros(shape)
    if source is not None:
        rhs += source
    if F1 is not None:
        rhs[1:n1] += (F1[2:] - F1[:-2]) / (2.0 * h1)
    if F2 is not None:
        if np.max(np.abs(F2[:, 0])) > 0.25 * max(np.max(np.abs(F2)), 1e-300):
            log.debug("s-flux data not vanishing towards the axis")
        ext = np.concatenate([-F2[:, :1], F2, 3 * F2[:, -1:] - 3 * F2[:, -2:-1] + F2[:, -3:-2]], axis=1)
        rhs += (ext[:, 2:] - ext[:, :-2]) / (2.0 * h2)
    G3 = np.zeros(n1 + 1) if G3 is None else np.asarray(G3, dtype=float)
    s = dom.z2
    a2 = c.a2[1:n1]
    # wall flux and ghost contributions move to the right side
    rhs[1:n1, -1] -= a2 * (c.d1[-1] / s[-1]) * dom.M * c.d1_wall * G3[1:n1] / h2
    rhs[1:n1, -1] += a2 * (c.kappa ** 2 / 8.0) * s[-1] * G3[1:n1]
    rhs[0] = 0.0 if G1 is None else G1
    rhs[n1] = 0.0 if G2 is None else G2
    if not np.all(np.isfinite(rhs)):
        raise PotentialSolveError("non-finite data in the potential problem")
    b = rhs.ravel()
    Y = op.lu.solve(b)
    # iterative refinement removes most of the factorization round-off
    for _ in range(2):
        Y = Y + op.lu.solve(b - op.matrix @ Y)
    Y = Y.reshape(shape)
    if not np.all(np.isfinite(Y)):
        raise PotentialSolveError("potential solve produced non-finite values "
                                  f"(condition estimate {op.condition_estimate:.3g})")
    mu = float(wall_trace_value(Y[0], G3[0], h2))
    return PotentialSolution(phi=Y - mu, mu=mu, upsilon=Y)


def potential_residual(op: PotentialOperator, Y):
    """Apply the discrete potential operator to a grid function (no data)."""
    return (op.matrix @ np.asarray(Y).ravel()).reshape(op.coeffs.domain.shape)


# ---------------------------------------------------------------------------
# finite differences on the fixed domain


def d_z1(W, h):
    """Central difference along z1; one-sided second order at both ends."""
    out = np.empty_like(W)
    out[1:-1] = (W[2:] - W[:-2]) / (2.0 * h)
    out[0] = (-3.0 * W[0] + 4.0 * W[1] - W[2]) / (2.0 * h)
    out[-1] = (3.0 * W[-1] - 4.0 * W[-2] + W[-3]) / (2.0 * h)
    return out


def d_z2(W, h, parity):
    """Central difference along z2 on the cell-centred grid.

    The axis ghost uses the parity (+1 even, -1 odd); the wall end uses the
    one-sided second-order formula.
    """
    out = np.empty_like(W)
    out[..., 1:-1] = (W[..., 2:] - W[..., :-2]) / (2.0 * h)
    out[..., 0] = (W[..., 1] - parity * W[..., 0]) / (2.0 * h)
    out[..., -1] = (3.0 * W[..., -1] - 4.0 * W[..., -2] + W[..., -3]) / (2.0 * h)
    return out


def d_profile(W6, W6M, h):
    """Derivative of the shock profile (even at the axis) using its wall value."""
    out = np.empty_like(W6)
    out[1:-1] = (W6[2:] - W6[:-2]) / (2.0 * h)
    out[0] = (W6[1] - W6[0]) / (2.0 * h)
    out[-1] = (-W6[-2] / 3.0 - W6[-1] + 4.0 * W6M / 3.0) / h
    return out


# ---------------------------------------------------------------------------
# iterate


@dataclass(frozen=True)
class PerturbationState:
    """Iterate (W1, ..., W5) on the grid, shock profile W6 and its wall value."""

    W1: np.ndarray
    W2: np.ndarray
    W3: np.ndarray
    W4: np.ndarray
    W5: np.ndarray
    W6: np.ndarray
    W6M: float

    @classmethod
    def zeros(cls, domain: FixedDomain):
        z = np.zeros(domain.shape)
        return cls(z, z.copy(), z.copy(), z.copy(), z.copy(), np.zeros(domain.n2), 0.0)

    @property
    def fields(self):
        return (self.W1, self.W2, self.W3, self.W4, self.W5)

    def W6_diamond(self, r_b):
        return r_b + self.W6

    def W6_sharp(self, domain: FixedDomain, r_b):
        z1 = domain.z1[:, None]
        return r_b + z1 + (domain.N - z1) * self.W6[None, :] / domain.N

    def __sub__(self, other):
        return PerturbationState(*(a - b for a, b in zip(self.fields, other.fields)),
                                 self.W6 - other.W6, self.W6M - other.W6M)

    def scaled(self, t):
        return PerturbationState(*(t * a for a in self.fields), t * self.W6, t * self.W6M)


def state_norm(state: PerturbationState, domain: FixedDomain) -> float:
    """Discrete norm: max over components of sup |W| + sup |first difference|/h."""
    h1, h2 = domain.h1, domain.h2
    vals = []
    for W in state.fields:
        d = 0.0
        if W.size:
            d = max(np.max(np.abs(np.diff(W, axis=0))) / h1, np.max(np.abs(np.diff(W, axis=1))) / h2)
        vals.append(np.max(np.abs(W)) + d)
    W6 = np.append(state.W6, state.W6M)
    steps = np.append(np.full(domain.n2 - 1, h2), 0.5 * h2)
    vals.append(np.max(np.abs(W6)) + np.max(np.abs(np.diff(W6)) / steps))
    return float(max(vals))


def axis_defects(state: PerturbationState, domain: FixedDomain) -> dict:
    """Discrete axis compatibilities of an iterate, scaled by its size.

    For even fields the slope at z2 = 0 of the quadratic through the first
    three cells; for the flow angle its value there.  Both are O(h^2) for
    smooth axis-compatible data.
    """
    h = domain.h2

    def fit(W):
        w0, w1, w2 = W[..., 0], W[..., 1], W[..., 2]
        val = (15.0 * w0 - 10.0 * w1 + 3.0 * w2) / 8.0
        slope = (-2.0 * w0 + 3.0 * w1 - w2) / h
        return val, slope

    out = {}
    scale = max(state_norm(state, domain), 1e-300)
    for name, W in (("W1", state.W1), ("W3", state.W3), ("W4", state.W4), ("W5", state.W5)):
        out[f"d{name}/dz2(axis)"] = float(np.max(np.abs(fit(W)[1])) / scale)
    out["W2(axis)"] = float(np.max(np.abs(fit(state.W2)[0])) / scale)
    out["W6'(axis)"] = float(abs(fit(state.W6)[1]) / scale)
    return out


# ---------------------------------------------------------------------------
# problem description and one application of the map


class BackgroundUpstream:
    """Upstream states of the unperturbed radial flow (exact, any radius)."""

    def __init__(self, bg: BackgroundSolution):
        self.bg = bg

    def __call__(self, y1, y2):
        U, _, P, _ = self.bg.profile(np.asarray(y1, dtype=float), SUPERSONIC)
        U = np.broadcast_to(U, np.shape(y2)).astype(float)
        z = np.zeros_like(U)
        return np.array([U, z, z, np.broadcast_to(P, U.shape), z + self.bg.S_minus])


class ChartUpstream:
    """Upstream states from a marched supersonic field through its chart."""

    def __init__(self, field, chart):
        self.field = field
        self.chart = chart

    def __call__(self, y1, y2):
        from .lagrangian import evaluate_at_lagrangian
        return evaluate_at_lagrangian(self.field, self.chart, y1, y2)


@dataclass
class SubsonicProblem:
    """Everything the map needs besides the iterate."""

    bg: BackgroundSolution
    domain: FixedDomain
    coeffs: LinearOperatorCoefficients
    upstream: Callable
    epsilon: float
    exit_profile: Callable          # P0(theta)
    wall: Callable                  # f'(r) of the wall perturbation
    operator: PotentialOperator | None = None
    jump_floor: float | None = None
    _guess: tuple | None = None

    def __post_init__(self):
        if self.operator is None:
            self.operator = assemble_potential(self.coeffs)
        if self.jump_floor is None:
            self.jump_floor = 1e-3 * self.bg.shock_pressure_jump


def build_problem(bg: BackgroundSolution, n1: int, n2: int, upstream: Callable,
                  epsilon: float, exit_profile: Callable, wall_slope: Callable,
                  validate: bool = True, M: float | None = None) -> SubsonicProblem:
    """Fixed domain, validated coefficients and factorized potential operator.

    ``M`` is the total flux of the incoming flow.  By default it is taken
    from the chart of a ChartUpstream, and from the background otherwise.
    """
    if M is None:
        chart = getattr(upstream, "chart", None)
        M = chart.M if chart is not None else math.sqrt(
            (1.0 - math.cos(bg.geometry.theta0)) / bg.kappa_b)
    domain = FixedDomain(N=bg.r2 - bg.r_b, M=float(M), n1=n1, n2=n2)
    coeffs = assemble_coefficients(bg, domain, validate=validate)
    return SubsonicProblem(bg, domain, coeffs, upstream, epsilon, exit_profile, wall_slope)


@dataclass
class NonlinearData:
    F1: np.ndarray
    F2: np.ndarray
    G1: np.ndarray
    G2: np.ndarray
    G3: np.ndarray
    G4: np.ndarray
    G5: np.ndarray
    g1: np.ndarray          # int_{z2}^M G1/d1
    bc_shock: np.ndarray
    bc_exit: np.ndarray
    bc_wall: np.ndarray
    remainders: object
    theta: np.ndarray
    upstream: np.ndarray
    B: np.ndarray
    N1: np.ndarray
    N2: np.ndarray


def _n_ghost(W6, h1):
    return int(min(max(4, math.ceil(3.0 * np.max(np.abs(W6)) / h1) + 4), 10 ** 6))


def extended_mass_flux(state: PerturbationState, prob: SubsonicProblem):
    """rho U1 of an iterate on the z1 grid widened by extension nodes.

    Returns (flux, n_ghost), the form expected by the angle-table routines.
    """
    bg, dom = prob.bg, prob.domain
    h1 = dom.h1
    ng = _n_ghost(state.W6, h1)
    ext = extend_grid(np.stack([state.W1, state.W4, state.W5], axis=1), h1, ng)
    ze = h1 * np.arange(-ng, dom.n1 + 1 + ng)
    Ue, _, Pe, _ = bg.profile(bg.r_b + ze, SUBSONIC)
    flux = _rho(Pe[:, None] + ext[:, 1], bg.S_plus + ext[:, 2], bg.gas) * (Ue[:, None] + ext[:, 0])
    return flux, ng


def compute_nonlinear_data(state: PerturbationState, prob: SubsonicProblem) -> NonlinearData:
    """Right-hand sides and boundary data of the linear problem at an iterate."""
    bg, dom, c = prob.bg, prob.domain, prob.coeffs
    g = bg.gas
    N, h1, h2 = dom.N, dom.h1, dom.h2
    z1 = dom.z1[:, None]
    z2 = dom.z2
    bgd = c.background
    Ub = bgd["U"][:, None]
    Pb = bgd["P"][:, None]
    dPb = bgd["dP"][:, None]
    W1, W2, W3, W4, W5 = state.fields
    W6 = state.W6
    psi = bg.r_b + W6
    up = np.asarray(prob.upstream(psi, z2))
    Bm = 0.5 * (up[0] ** 2 + up[1] ** 2 + up[2] ** 2) + enthalpy(up[3], up[4], g)

    theta = angle_table(dom, bg.r_b, W6, *extended_mass_flux(state, prob))

    tr = trace_remainders(bg, c.jump, up, W1[0], W2[0], W4[0], W6, theta[0], z2, h2, c.d1,
                          prob.jump_floor, guess=prob._guess)
    prob._guess = (tr.P_jump, tr.S_jump)

    dW2_1, dW2_2 = d_z1(W2, h1), d_z2(W2, h2, -1.0)
    dW4_1, dW4_2 = d_z1(W4, h1), d_z2(W4, h2, 1.0)
    dW6 = d_profile(W6, state.W6M, h2)
    N1, N2 = lagrangian_residuals(g, z1, N, bg.r_b, W6[None, :], dW6[None, :], theta, z2[None, :],
                                  W2, dW2_1, dW2_2, Pb + W4, dPb + dW4_1, dW4_2, bg.S_plus + W5,
                                  W3, Bm[None, :])
    d1 = c.d1[None, :]
    q = (z1 - N) / N
    b1 = c.beta1[:, None]
    L1 = dW2_1 - c.alpha1[:, None] * W2 + b1 * d1 * dW4_2 + b1 * d1 * q * dPb * dW6[None, :]
    L2 = (dW4_1 - c.beta2[:, None] * (d1 * dW2_2 + (c.d2 / c.d1)[None, :] * W2)
          + c.e4[:, None] * W4 + c.e5[:, None] * W5 + c.e6[:, None] * W6[None, :])
    F1 = L1 - N1
    F2 = L2 - N2
    G1 = c.lambda1[:, None] * (F1 - b1 * d1 * q * dPb * tr.R11[None, :])
    G2 = (c.lambda4[:, None] * F2 - c.lambda6[:, None] * tr.R12[None, :]
          - (c.lambda4 * c.e5)[:, None] * tr.R4[None, :])
    G3 = c.e1 * tr.R12 + tr.R3
    G4 = np.asarray(prob.exit_profile(theta[-1]), dtype=float) * np.ones(dom.n2)
    y_wall = bg.r_b + dom.z1 + (N - dom.z1) * state.W6M / N
    G5 = y_wall * np.asarray(prob.wall(y_wall), dtype=float)
    g1 = integrate_from_wall(G1 / d1, h2)
    eps = prob.epsilon
    bc_shock = c.lambda2[0] * G3 + g1[0]
    bc_exit = c.lambda2[-1] * eps * G4 + g1[-1]
    bc_wall = -c.lambda1 * eps * G5 / c.d1_wall
    return NonlinearData(F1, F2, G1, G2, G3, G4, G5, g1, bc_shock, bc_exit, bc_wall, tr,
                         theta, up, Bm, N1, N2)


def recover_W2_W4(sol: PotentialSolution, coeffs: LinearOperatorCoefficients, g1, bc_wall):
    """(W2, W4, W6(M)) from the potential.

    W2 = -d1 dY/dz2 / lambda1, W4 = (dY/dz1 + lambda3 Y(0, z2) - g1)/lambda2 and
    W6(M) = -a Y(0, M).  ``g1`` is int_{z2}^M G1/d1 and ``bc_wall`` the wall
    slope of Y used as the wall ghost.
    """
    dom = coeffs.domain
    h1, h2 = dom.h1, dom.h2
    Y = sol.upsilon
    g1 = np.zeros(dom.shape) if g1 is None else g1
    bc_wall = np.zeros(dom.n1 + 1) if bc_wall is None else np.asarray(bc_wall)
    ext = np.concatenate([Y[:, :1], Y, (Y[:, -1] + h2 * bc_wall)[:, None]], axis=1)
    dY2 = (ext[:, 2:] - ext[:, :-2]) / (2.0 * h2)
    W2 = -coeffs.d1[None, :] * dY2 / coeffs.lambda1[:, None]
    W4 = (d_z1(Y, h1) + coeffs.lambda3[:, None] * Y[0][None, :] - g1) / coeffs.lambda2[:, None]
    return W2, W4, -coeffs.a * sol.mu


def update_transport(hat: PerturbationState, W2, W4, W6M, data: NonlinearData,
                     prob: SubsonicProblem):
    """Shock profile, entropy, swirl and radial velocity of the next iterate."""
    bg, dom, c = prob.bg, prob.domain, prob.coeffs
    g = bg.gas
    tr = data.remainders
    wall_val = prob.epsilon * data.G5[0] / c.d1_wall
    W6 = W6M - c.a * integrate_from_wall(W2[0] / c.d1, dom.h2, wall_value=wall_val) + tr.R12
    W5 = np.broadcast_to(c.e2 * W6 + tr.R4, dom.shape).copy()
    theta = data.theta
    sharp = hat.W6_sharp(dom, bg.r_b)
    W3 = (hat.W6_diamond(bg.r_b)[None, :] / sharp) * (np.sin(theta[0])[None, :] / np.sin(theta)) \
        * data.upstream[2][None, :]
    Ub = c.background["U"][:, None]
    Pb = c.background["P"][:, None]
    dh = enthalpy(Pb + W4, bg.S_plus + W5, g) - enthalpy(Pb, bg.S_plus, g)
    W1 = ((data.B[None, :] - bg.B - dh) / Ub
          - (hat.W1 ** 2 + (Ub + hat.W1) ** 2 * hat.W2 ** 2 + hat.W3 ** 2) / (2.0 * Ub))
    return W6, W5, W3, W1


def apply_map(hat: PerturbationState, prob: SubsonicProblem):
    """One application of the fixed-point map; returns (new state, data, solution)."""
    data = compute_nonlinear_data(hat, prob)
    sol = solve_potential(prob.operator, F1=prob.coeffs.a1[:, None] * data.g1, G1=data.bc_shock,
                          G2=data.bc_exit, G3=data.bc_wall, source=data.G2)
    W2, W4, W6M = recover_W2_W4(sol, prob.coeffs, data.g1, data.bc_wall)
    W6, W5, W3, W1 = update_transport(hat, W2, W4, W6M, data, prob)
    return PerturbationState(W1, W2, W3, W4, W5, W6, float(W6M)), data, sol


def exact_radial_velocity(state: PerturbationState, prob: SubsonicProblem, B):
    """W1 from the exact Bernoulli inversion with the state's other unknowns."""
    g = prob.bg.gas
    c = prob.coeffs
    Ub = c.background["U"][:, None]
    Pb = c.background["P"][:, None]
    h = enthalpy(Pb + state.W4, prob.bg.S_plus + state.W5, g)
    U1 = np.sqrt((2.0 * (B[None, :] - h) - state.W3 ** 2) / (1.0 + state.W2 ** 2))
    return U1 - Ub


# ---------------------------------------------------------------------------
# outer loop


@dataclass
class IterationReport:
    norms: list = field(default_factory=list)
    updates: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    axis: list = field(default_factory=list)
    solve_times: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    tolerance: float = 0.0
    trust_radius: float = 0.0
    condition_estimate: float = float("nan")
    assembly_time: float = 0.0
    message: str = ""

    def rows(self):
        for k in range(len(self.norms)):
            yield {"k": k + 1, "norm": self.norms[k], "update": self.updates[k],
                   "ratio": self.ratios[k], "residual": self.residuals[k]}

    def asymptotic_ratio(self, floor: float | None = None):
        """Geometric mean of the ratios whose update stays well above ``floor``."""
        floor = 100.0 * self.tolerance if floor is None else floor
        r = [q for q, u in zip(self.ratios[1:], self.updates[1:])
             if np.isfinite(q) and q > 0 and u > floor]
        return float(np.exp(np.mean(np.log(r)))) if r else float("nan")

    def to_dict(self):
        return {
            "converged": self.converged, "iterations": self.iterations,
            "tolerance": self.tolerance, "trust_radius": self.trust_radius,
            "norms": self.norms, "updates": self.updates, "ratios": self.ratios,
            "residuals": self.residuals, "condition_estimate": self.condition_estimate,
            "assembly_time": self.assembly_time, "message": self.message,
        }


def background_scale(prob: SubsonicProblem) -> float:
    """Size of the background downstream state in the iteration norm."""
    b = prob.coeffs.background
    return float(max(np.max(np.abs(b["U"])) + np.max(np.abs(b["dU"])),
                     np.max(np.abs(b["P"])) + np.max(np.abs(b["dP"])), 1.0))


def residual_norm(data: NonlinearData) -> float:
    """Sup of the full nonlinear residual of the iterate (interior equations)."""
    return float(max(np.max(np.abs(data.N1)), np.max(np.abs(data.N2))))


def default_tolerance(epsilon: float) -> float:
    return 1e-10 * max(epsilon, 1e-8)


def fixed_point_solve(prob: SubsonicProblem, tol: float | None = None, max_iter: int = 60,
                      delta: float | None = None, initial: PerturbationState | None = None,
                      roundoff_floor: float = 1e-13, divergence_count: int = 3):
    """Iterate the map from ``initial`` (default 0) to a fixed point.

    Stops when the update norm falls below ``max(tol, roundoff_floor / h)``
    with h the smaller grid step; the norm contains difference quotients, so
    round-off in the iterate is amplified by 1/h.
    Raises ContractionError after ``divergence_count`` consecutive ratios
    >= 1 or when an iterate leaves the trust region of radius ``delta``, and
    NonConvergenceError after ``max_iter`` iterations.
    """
    dom = prob.domain
    tol = default_tolerance(prob.epsilon) if tol is None else tol
    eff_tol = max(tol, roundoff_floor / min(dom.h1, dom.h2))
    if delta is None:
        delta = max(10.0 * prob.epsilon * background_scale(prob), 1e3 * roundoff_floor)
    rep = IterationReport(tolerance=eff_tol, trust_radius=delta,
                          condition_estimate=prob.operator.condition_estimate,
                          assembly_time=prob.operator.assembly_time)
    W = PerturbationState.zeros(dom) if initial is None else initial
    prob._guess = None
    bad = 0
    data = None
    for k in range(max_iter):
        t0 = time.perf_counter()
        Wn, data, _ = apply_map(W, prob)
        rep.solve_times.append(time.perf_counter() - t0)
        upd = state_norm(Wn - W, dom)
        nrm = state_norm(Wn, dom)
        ratio = upd / rep.updates[-1] if rep.updates and rep.updates[-1] > 0 else float("nan")
        rep.norms.append(nrm)
        rep.updates.append(upd)
        rep.ratios.append(ratio)
        rep.residuals.append(residual_norm(data))
        rep.axis.append(axis_defects(Wn, dom))
        rep.iterations = k + 1
        log.info("iteration %d: norm %.6e update %.3e ratio %.3g", k + 1, nrm, upd, ratio)
        if not np.isfinite(upd):
            raise ContractionError("iteration produced non-finite values; reduce epsilon")
        if nrm > delta:
            rep.message = f"iterate norm {nrm:.3g} left the trust region {delta:.3g}"
            raise TrustRegionError(rep.message + "; try a smaller epsilon or a finer grid")
        bad = bad + 1 if ratio >= 1.0 else 0
        if bad >= divergence_count:
            rep.message = f"contraction ratio >= 1 for {bad} consecutive iterations"
            raise ContractionError(rep.message + "; try a smaller epsilon or a finer grid")
        W = Wn
        if upd < eff_tol:
            rep.converged = True
            break
    if not rep.converged:
        rep.message = f"no convergence in {max_iter} iterations (last update {rep.updates[-1]:.3g})"
        raise NonConvergenceError(rep.message, rep)
    W = replace(W, W1=exact_radial_velocity(W, prob, data.B))
    rep.message = "converged"
    return W, rep
