"""End-to-end orchestration: background, supersonic march, subsonic iteration
and reconstruction of the flow on a regular (r, theta) grid."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from ..background import SUBSONIC, SUPERSONIC, BackgroundSolution, shoot_shock_position
from ..gas import enthalpy
from ..lagrangian import (ChartError, SupersonicChart, angle_lines, build_chart,
                          lagrange_columns)
from ..subsonic_iter import (BackgroundUpstream, ChartUpstream, IterationReport,
                             PerturbationState, SubsonicProblem, build_problem,
                             d_profile, extended_mass_flux, fixed_point_solve)
from ..supersonic import InletPerturbation, SupersonicField, march, radial_field
from .config import CaseConfig

log = logging.getLogger(__name__)


class ReconstructionError(RuntimeError):
    pass


@dataclass
class ShockCurve:
    """Shock front r = xi(theta) sampled at the Lagrangian trace points."""

    theta: np.ndarray       # trace angles including the axis (0) and the wall
    xi: np.ndarray
    spline: CubicSpline

    def __call__(self, theta, nu=0):
        return self.spline(theta, nu)

    @property
    def theta_wall(self):
        return float(self.theta[-1])


@dataclass
class EulerianFields:
    """Flow on the grid theta = sigma * stretch(r); ``region`` is 1 behind the shock."""

    r: np.ndarray           # (nr,)
    sigma: np.ndarray       # (nt,)
    theta: np.ndarray       # (nr, nt)
    values: np.ndarray      # (5, nr, nt): U1, U2, U3, P, S
    region: np.ndarray      # (nr, nt) int
    z1: np.ndarray          # fixed-domain abscissa behind the shock, nan ahead
    z2: np.ndarray          # Lagrangian ordinate behind the shock, nan ahead


@dataclass
class SolutionBundle:
    config: CaseConfig
    background: BackgroundSolution
    perturbation: InletPerturbation
    field: SupersonicField
    chart: SupersonicChart | None
    problem: SubsonicProblem
    state: PerturbationState
    report: IterationReport
    theta: np.ndarray                   # subsonic streamline angle on the fixed grid
    upstream: np.ndarray                # (5, n2) supersonic state ahead of the shock
    shock: ShockCurve | None = None
    eulerian: EulerianFields | None = None
    timings: dict = field(default_factory=dict)

    @property
    def domain(self):
        return self.problem.domain

    def downstream_fields(self):
        """(U1, U2, U3, P, S) behind the shock on the fixed grid, shape (5, n1+1, n2)."""
        return lagrangian_states(self.problem, self.state)

    def shock_states(self):
        """(downstream, upstream) states on the shock trace, each (5, n2)."""
        return self.downstream_fields()[:, 0, :], self.upstream

    def shock_slope(self):
        W = self.state
        return d_profile(W.W6, W.W6M, self.domain.h2)


# ---------------------------------------------------------------------------
# stages


def run_background(cfg: CaseConfig) -> BackgroundSolution:
    return shoot_shock_position(cfg.exit_pressure, cfg.inlet, cfg.geometry, cfg.gas,
                                tol=float(cfg.numerics["shooting_tol"]))


def build_perturbation(cfg: CaseConfig) -> InletPerturbation:
    p = cfg.profiles
    return InletPerturbation(cfg.epsilon, U1p=p["U1p"], U2p=p["U2p"], U3p=p["U3p"],
                             Pp=p["Pp"], Sp=p["Sp"], wall=p["wall"])


def build_supersonic(cfg: CaseConfig, bg: BackgroundSolution, pert: InletPerturbation):
    """(field, chart, upstream).  With eps = 0 the exact radial flow is used."""
    num = cfg.numerics
    if cfg.epsilon == 0.0:
        fld = radial_field(bg, cfg.n_sigma)
        return fld, None, BackgroundUpstream(bg)
    fld = march(pert, bg, cfg.n_sigma, cfl=float(num["cfl"]),
                dissipation=float(num["dissipation"]))
    chart = build_chart(fld)
    return fld, chart, ChartUpstream(fld, chart)


def build_subsonic(cfg: CaseConfig, bg: BackgroundSolution, pert: InletPerturbation, upstream):
    return build_problem(bg, cfg.n1, cfg.n2, upstream, cfg.epsilon, cfg.profiles["P0"],
                         lambda r: pert.wall_derivatives(r, bg.r1)[1],
                         validate=bool(cfg.numerics["validate_coefficients"]))


def solve_case(cfg: CaseConfig, reconstruct: bool = True) -> SolutionBundle:
    """Run every stage for one configuration."""
    num = cfg.numerics
    timings = {}
    t = time.perf_counter()
    bg = run_background(cfg)
    timings["background"] = time.perf_counter() - t
    log.info("background: r_b = %.12g after %d shooting steps", bg.r_b, bg.shooting_iterations)

    pert = build_perturbation(cfg)
    t = time.perf_counter()
    fld, chart, upstream = build_supersonic(cfg, bg, pert)
    timings["supersonic"] = time.perf_counter() - t

    t = time.perf_counter()
    prob = build_subsonic(cfg, bg, pert, upstream)
    timings["assembly"] = time.perf_counter() - t

    t = time.perf_counter()
    W, rep = fixed_point_solve(prob, tol=num["tol"], max_iter=int(num["max_iter"]),
                               delta=num["delta"], roundoff_floor=float(num["roundoff_floor"]))
    timings["iteration"] = time.perf_counter() - t
    log.info("subsonic iteration: %s after %d iterations, norm %.6e",
             rep.message, rep.iterations, rep.norms[-1])

    theta = streamline_angles(prob, W)
    up = np.asarray(upstream(bg.r_b + W.W6, prob.domain.z2))
    bundle = SolutionBundle(cfg, bg, pert, fld, chart, prob, W, rep, theta, up, timings=timings)
    if reconstruct:
        t = time.perf_counter()
        bundle.shock = shock_curve(bundle)
        bundle.eulerian = reconstruct_eulerian(bundle)
        timings["reconstruction"] = time.perf_counter() - t
    return bundle


# ---------------------------------------------------------------------------
# reconstruction


def streamline_angles(prob: SubsonicProblem, W: PerturbationState):
    from ..lagrangian import angle_table
    flux, ng = extended_mass_flux(W, prob)
    return angle_table(prob.domain, prob.bg.r_b, W.W6, flux, ng)


def lagrangian_states(prob: SubsonicProblem, W: PerturbationState):
    """Physical states (U1, U2, U3, P, S) on the fixed grid."""
    b = prob.coeffs.background
    U1 = b["U"][:, None] + W.W1
    return np.array([U1, U1 * W.W2, W.W3, b["P"][:, None] + W.W4, prob.bg.S_plus + W.W5])


def _axis_wall_value(v):
    """Value at the face past the last cell centre from a quadratic fit."""
    return (15.0 * v[..., -1] - 10.0 * v[..., -2] + 3.0 * v[..., -3]) / 8.0


def shock_curve(bundle: SolutionBundle) -> ShockCurve:
    """xi(theta) through the trace points, the axis and the wall corner."""
    W = bundle.state
    dom = bundle.domain
    th0 = bundle.theta[0]
    # axis: even extension of W6 (value of the quadratic through three cells)
    xi_axis = bundle.background.r_b + (15.0 * W.W6[0] - 10.0 * W.W6[1] + 3.0 * W.W6[2]) / 8.0
    xi_wall = bundle.background.r_b + W.W6M
    flux, ng = extended_mass_flux(W, bundle.problem)
    Y, G, G_wall = angle_lines(dom, bundle.background.r_b, W.W6, flux, ng)
    th_wall = float(np.arccos(1.0 - np.interp(xi_wall, Y, G_wall)))
    theta = np.concatenate([[0.0], th0, [th_wall]])
    xi = np.concatenate([[xi_axis], bundle.background.r_b + W.W6, [xi_wall]])
    if np.any(np.diff(theta) <= 0.0):
        raise ReconstructionError("shock trace angles are not increasing")
    bg = bundle.background
    if xi.min() <= bg.r1 or xi.max() >= bg.r2:
        raise ReconstructionError("shock front leaves the nozzle section")
    return ShockCurve(theta, xi, CubicSpline(theta, xi))


def _z2_extended(values, z2, M, parity):
    """Cell-centred data widened by two axis ghosts and the wall face value."""
    h = z2[1] - z2[0]
    ghosts = parity * values[..., 1::-1]
    zz = np.concatenate([[-1.5 * h, -0.5 * h], z2, [M]])
    vv = np.concatenate([ghosts, values, _axis_wall_value(values)[..., None]], axis=-1)
    return zz, vv


def reconstruct_eulerian(bundle: SolutionBundle, n_r: int | None = None,
                         n_theta: int | None = None) -> EulerianFields:
    """Sample the composite flow on theta = sigma * stretch(r), r in [r1, r2]."""
    cfg = bundle.config
    bg = bundle.background
    prob = bundle.problem
    dom = prob.domain
    W = bundle.state
    fld = bundle.field
    shock = bundle.shock or shock_curve(bundle)
    n_r = n_r or cfg.numerics["eulerian_nr"] or 2 * cfg.n1
    n_theta = n_theta or cfg.numerics["eulerian_ntheta"] or cfg.n2
    r = np.linspace(bg.r1, bg.r2, n_r + 1)
    sigma = np.linspace(0.0, bg.geometry.theta0, n_theta + 1)
    theta = sigma[None, :] * fld.stretch(r)[:, None]
    region = (r[:, None] > shock(np.minimum(theta, shock.theta_wall))).astype(int)
    values = np.empty((5, r.size, sigma.size))
    values[:] = fld.evaluate_sigma(r[:, None], sigma[None, :])

    # inverse chart behind the shock: z2 from the angle integral on radius lines
    flux, ng = extended_mass_flux(W, prob)
    Y, G, G_wall = angle_lines(dom, bg.r_b, W.W6, flux, ng)
    z2c = dom.z2
    zz = np.concatenate([[0.0], z2c, [dom.M]])
    rows = np.nonzero(region.any(axis=1))[0]
    if rows.size and (r[rows].max() > Y[-2] or r[rows].min() < Y[1]):
        raise ReconstructionError("Eulerian radii outside the chart lines")
    Z1 = np.full(theta.shape, np.nan)
    Z2 = np.full(theta.shape, np.nan)
    if rows.size:
        rq = np.broadcast_to(r[rows][:, None], (rows.size, dom.n2))
        Gr = lagrange_columns(G, Y[0], dom.h1, rq)
        Gw = lagrange_columns(G_wall[:, None], Y[0], dom.h1, r[rows][:, None])[:, 0]
        W6s = CubicSpline(*_z2_extended(W.W6, z2c, dom.M, 1.0))
        for k, i in enumerate(rows):
            mask = region[i] == 1
            # z2 is a smooth odd function of the angle, not of 1 - cos(theta)
            tline = np.arccos(1.0 - np.concatenate([[0.0], Gr[k], [Gw[k]]]))
            if np.any(np.diff(tline) <= 0.0):
                raise ReconstructionError(f"angle integral not monotone at r = {r[i]:.6g}")
            tt = np.concatenate([-tline[2:0:-1], tline])
            z2q = CubicSpline(tt, np.concatenate([-zz[2:0:-1], zz]))(
                np.clip(theta[i, mask], 0.0, tline[-1]))
            z2q = np.clip(z2q, 0.0, dom.M)
            w6 = W6s(z2q)
            Z2[i, mask] = z2q
            Z1[i, mask] = np.clip((r[i] - bg.r_b - w6) * dom.N / (dom.N - w6), 0.0, dom.N)
        sub = region == 1
        z1q, z2q = Z1[sub], Z2[sub]
        parity = (1.0, -1.0, -1.0, 1.0, 1.0)
        Wf = (W.W1, W.W2, W.W3, W.W4, W.W5)
        ev = []
        for Wk, par in zip(Wf, parity):
            zze, vv = _z2_extended(Wk, z2c, dom.M, par)
            ev.append(RectBivariateSpline(dom.z1, zze, vv, kx=3, ky=3).ev(z1q, z2q))
        Ub, _, Pb, _ = bg.profile(bg.r_b + z1q, SUBSONIC)
        U1 = Ub + ev[0]
        values[0][sub] = U1
        values[1][sub] = U1 * ev[1]
        values[2][sub] = ev[2]
        values[3][sub] = Pb + ev[3]
        values[4][sub] = bg.S_plus + ev[4]
    return EulerianFields(r, sigma, theta, values, region, Z1, Z2)


def background_eulerian(bg: BackgroundSolution, ef: EulerianFields) -> np.ndarray:
    """The unperturbed flow on the same grid with the same region split."""
    out = np.zeros_like(ef.values)
    R = np.broadcast_to(ef.r[:, None], ef.theta.shape)
    for branch, reg in ((SUPERSONIC, 0), (SUBSONIC, 1)):
        m = ef.region == reg
        if m.any():
            U, _, P, _ = bg.profile(R[m], branch)
            out[0][m] = U
            out[3][m] = P
            out[4][m] = bg.entropy(branch)
    return out


def bernoulli_field(values, g):
    v = np.asarray(values)
    return 0.5 * (v[0] ** 2 + v[1] ** 2 + v[2] ** 2) + enthalpy(v[3], v[4], g)
