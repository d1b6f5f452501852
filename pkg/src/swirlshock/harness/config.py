"""Case configuration: TOML schema, defaults and validation.

Sections are ``[gas]``, ``[geometry]``, ``[inlet]``, ``[perturbation]`` and
``[numerics]``.  Profiles in ``[perturbation]`` are either coefficient lists
(powers of theta; the wall ``f`` in powers of r - r1) or a table
``{shape = "even" | "odd" | "swirl" | "zero", amplitude = x}`` naming one of
the axis/wall compatible shapes built from theta0.
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import Polynomial

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ..background import NozzleGeometry, exit_pressure_range
from ..gas import FlowState, GasConstants, GasDomainError, entropy_from_rhoP, mach


class ConfigError(ValueError):
    pass


class ConfigParseError(ConfigError):
    def __init__(self, message, line=None, column=None):
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"cannot parse configuration{loc}: {message}")
        self.line = line
        self.column = column


class ConfigValidationError(ConfigError):
    def __init__(self, failures):
        self.failures = list(failures)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.failures))


DEFAULTS = {
    "gas": {"gamma": 1.4, "A": 1.0, "c_v": 1.0},
    "geometry": {"r1": 1.0, "r2": 2.0, "theta0": math.pi / 6, "exit_pressure": 1.94},
    "inlet": {"U1": 2.0, "rho": 1.0, "P": 1.0 / 1.4},
    "perturbation": {
        "epsilon": 1e-3,
        "U1p": {"shape": "even", "amplitude": 0.5},
        "U2p": {"shape": "odd", "amplitude": 0.3},
        "U3p": {"shape": "swirl", "amplitude": 1.0},
        "Pp": {"shape": "even", "amplitude": 0.4},
        "Sp": {"shape": "even", "amplitude": 0.2},
        "wall": [0.0],
        "P0": {"shape": "even", "amplitude": 0.4},
    },
    "numerics": {
        "n1": 64, "n2": 64, "n_sigma": None, "cfl": 0.8, "dissipation": 0.5,
        "tol": None, "max_iter": 60, "delta": None, "roundoff_floor": 1e-13,
        "shooting_tol": 1e-12, "eulerian_nr": None, "eulerian_ntheta": None,
        "validate_coefficients": True, "straight_wall_mode": False,
        "diagnostics": "basic", "workers": 1, "epsilon0": 4e-3,
    },
}

PROFILE_NAMES = ("U1p", "U2p", "U3p", "Pp", "Sp", "P0")
SHAPES = ("even", "odd", "swirl", "zero")


def shape_polynomial(shape: str, theta0: float) -> Polynomial:
    """Unit-size polynomial shapes compatible with the axis and a straight wall.

    even:  (theta^2 - theta^4/(2 theta0^2))/theta0^2, zero slope at 0 and theta0
    odd:   (theta0^2 theta - theta^3)/theta0^3, odd, zero second derivative at 0
    swirl: theta^3 (theta0^2 - theta^2)^2/theta0^7, odd, vanishing with its
           slope at theta0
    """
    t = theta0
    if shape == "even":
        return Polynomial([0.0, 0.0, 1.0, 0.0, -0.5 / t ** 2]) / t ** 2
    if shape == "odd":
        return Polynomial([0.0, t ** 2, 0.0, -1.0]) / t ** 3
    if shape == "swirl":
        return Polynomial([0.0, 0.0, 0.0, t ** 4, 0.0, -2 * t ** 2, 0.0, 1.0]) / t ** 7
    if shape == "zero":
        return Polynomial([0.0])
    raise ConfigError(f"unknown profile shape {shape!r}; expected one of {SHAPES}")


@dataclass(frozen=True)
class CaseConfig:
    gas: GasConstants
    geometry: NozzleGeometry
    inlet: FlowState
    exit_pressure: float
    epsilon: float
    profiles: dict            # name -> Polynomial in theta (wall: in r - r1)
    numerics: dict
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n1(self):
        return int(self.numerics["n1"])

    @property
    def n2(self):
        return int(self.numerics["n2"])

    @property
    def n_sigma(self):
        return int(self.numerics["n_sigma"] or self.n2)

    @property
    def wall(self) -> Polynomial:
        return self.profiles["wall"]

    @property
    def straight_wall(self) -> bool:
        return bool(np.all(self.wall.coef == 0.0))

    def with_updates(self, **sections) -> "CaseConfig":
        """New validated config with some keys replaced, e.g. numerics={"n1": 128}."""
        raw = copy.deepcopy(self.raw)
        for sec, vals in sections.items():
            raw.setdefault(sec, {}).update(vals)
        return config_from_dict(raw)


def _merge(defaults, given, path, failures):
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if key not in defaults:
            failures.append(f"unknown key {path}.{key}" if path else f"unknown section [{key}]")
            continue
        if isinstance(defaults[key], dict) and key in ("gas", "geometry", "inlet", "perturbation",
                                                       "numerics"):
            if not isinstance(val, dict):
                failures.append(f"[{key}] must be a table")
                continue
            out[key] = _merge(defaults[key], val, key, failures)
        else:
            out[key] = val
    return out


def _profile(entry, name, theta0, failures):
    try:
        if isinstance(entry, dict):
            unknown = set(entry) - {"shape", "amplitude"}
            if unknown:
                raise ConfigError(f"unknown keys {sorted(unknown)}")
            return float(entry.get("amplitude", 1.0)) * shape_polynomial(str(entry.get("shape", "zero")), theta0)
        coef = np.asarray(entry, dtype=float)
        if coef.ndim != 1 or coef.size == 0 or not np.all(np.isfinite(coef)):
            raise ConfigError("expected a non-empty list of finite coefficients")
        return Polynomial(coef)
    except (ConfigError, TypeError, ValueError) as exc:
        failures.append(f"perturbation.{name}: {exc}")
        return Polynomial([0.0])


def _num(d, key, sec, failures, cond=None, msg=""):
    v = d[key]
    try:
        v = float(v)
    except (TypeError, ValueError):
        failures.append(f"{sec}.{key} must be a number, got {v!r}")
        return None
    if not math.isfinite(v):
        failures.append(f"{sec}.{key} must be finite")
        return None
    if cond is not None and not cond(v):
        failures.append(f"{sec}.{key} = {v!r}: {msg}")
        return None
    return v


def config_from_dict(data: dict) -> CaseConfig:
    """Merge with defaults and validate; every failure is reported at once."""
    failures = []
    raw = _merge(DEFAULTS, data or {}, "", failures)
    gs, geo, inl, per, num = (raw[k] for k in ("gas", "geometry", "inlet", "perturbation", "numerics"))

    gamma = _num(gs, "gamma", "gas", failures, lambda v: v > 1.0, "must exceed 1")
    A = _num(gs, "A", "gas", failures, lambda v: v > 0.0, "must be positive")
    c_v = _num(gs, "c_v", "gas", failures, lambda v: v > 0.0, "must be positive")
    r1 = _num(geo, "r1", "geometry", failures, lambda v: v > 0.0, "must be positive")
    r2 = _num(geo, "r2", "geometry", failures, lambda v: v > 0.0, "must be positive")
    theta0 = _num(geo, "theta0", "geometry", failures, lambda v: 0.0 < v < math.pi / 2,
                  "must lie in (0, pi/2)")
    P_e = _num(geo, "exit_pressure", "geometry", failures, lambda v: v > 0.0, "must be positive")
    U1 = _num(inl, "U1", "inlet", failures, lambda v: v > 0.0, "must be positive")
    rho = _num(inl, "rho", "inlet", failures, lambda v: v > 0.0, "must be positive")
    P = _num(inl, "P", "inlet", failures, lambda v: v > 0.0, "must be positive")
    eps = _num(per, "epsilon", "perturbation", failures, lambda v: v >= 0.0, "must be >= 0")
    if r1 is not None and r2 is not None and not r1 < r2:
        failures.append(f"geometry: r1 = {r1} must be smaller than r2 = {r2}")

    for key in ("n1", "n2"):
        v = num[key]
        if not isinstance(v, int) or isinstance(v, bool) or v < 8:
            failures.append(f"numerics.{key} must be an integer >= 8, got {v!r}")
    if num["n_sigma"] is not None and (not isinstance(num["n_sigma"], int) or num["n_sigma"] < 8):
        failures.append(f"numerics.n_sigma must be an integer >= 8, got {num['n_sigma']!r}")
    if not isinstance(num["max_iter"], int) or num["max_iter"] < 1:
        failures.append(f"numerics.max_iter must be a positive integer, got {num['max_iter']!r}")
    for key in ("tol", "delta"):
        if num[key] is not None:
            _num(num, key, "numerics", failures, lambda v: v > 0.0, "must be positive")
    for key in ("cfl",):
        _num(num, key, "numerics", failures, lambda v: 0.0 < v <= 1.0, "must lie in (0, 1]")
    _num(num, "dissipation", "numerics", failures, lambda v: v >= 0.0, "must be >= 0")
    _num(num, "shooting_tol", "numerics", failures, lambda v: v > 0.0, "must be positive")
    _num(num, "roundoff_floor", "numerics", failures, lambda v: v >= 0.0, "must be >= 0")
    if num["diagnostics"] not in ("basic", "full"):
        failures.append(f"numerics.diagnostics must be 'basic' or 'full', got {num['diagnostics']!r}")
    if not isinstance(num["workers"], int) or num["workers"] < 1:
        failures.append(f"numerics.workers must be a positive integer, got {num['workers']!r}")

    profiles = {}
    t0 = theta0 if theta0 is not None else math.pi / 6
    for name in PROFILE_NAMES:
        profiles[name] = _profile(per[name], name, t0, failures)
    profiles["wall"] = _profile(per["wall"], "wall", t0, failures)

    gas = inlet = geometry = None
    if None not in (gamma, A, c_v):
        gas = GasConstants(gamma, A, c_v)
    if None not in (r1, r2, theta0) and r1 < r2:
        geometry = NozzleGeometry(r1, r2, theta0)
    if gas is not None and None not in (U1, rho, P):
        inlet = FlowState(U1, 0.0, 0.0, P, float(entropy_from_rhoP(rho, P, gas)))
        if not float(mach(inlet, gas)) > 1.0:
            failures.append(f"inlet Mach number {float(mach(inlet, gas)):.4g} must exceed 1")
            inlet = None
    if num["straight_wall_mode"] and not np.all(profiles["wall"].coef == 0.0):
        failures.append("numerics.straight_wall_mode requires perturbation.wall = [0.0]")
    if gas is not None and inlet is not None and geometry is not None and P_e is not None:
        try:
            rng = exit_pressure_range(inlet, geometry, gas)
        except (GasDomainError, RuntimeError) as exc:
            failures.append(f"background flow does not exist: {exc}")
        else:
            if not rng.contains(P_e):
                failures.append(f"geometry.exit_pressure = {P_e!r} outside the admissible range "
                                f"({rng.P1:.12g}, {rng.P2:.12g})")
    if failures:
        raise ConfigValidationError(failures)
    return CaseConfig(gas=gas, geometry=geometry, inlet=inlet, exit_pressure=P_e, epsilon=eps,
                      profiles=profiles, numerics=dict(num), raw=raw)


def default_config(**sections) -> CaseConfig:
    """The built-in default case, optionally with section overrides."""
    return config_from_dict(copy.deepcopy(sections))


def parse_toml(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        msg = str(exc)
        m = re.search(r"line (\d+), column (\d+)", msg)
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ConfigParseError(msg, line, col) from exc


def load_config(path) -> CaseConfig:
    """Read and validate a TOML case file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return config_from_dict(parse_toml(text))
