"""Polytropic gas thermodynamics and pointwise state algebra.

The equation of state is ``P = A rho**gamma * exp(S / c_v)``.  Every function
here accepts scalars or numpy arrays and broadcasts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GasDomainError(ValueError):
    """Raised when a thermodynamic function is evaluated outside its domain."""


@dataclass(frozen=True)
class GasConstants:
    gamma: float = 1.4
    A: float = 1.0
    c_v: float = 1.0

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise GasDomainError(f"gamma must exceed 1, got {self.gamma}")
        if not self.A > 0.0:
            raise GasDomainError(f"A must be positive, got {self.A}")
        if not self.c_v > 0.0:
            raise GasDomainError(f"c_v must be positive, got {self.c_v}")


@dataclass(frozen=True)
class FlowState:
    """One gas state in spherical components (radial, polar, swirl)."""

    U1: float
    U2: float
    U3: float
    P: float
    S: float

    def __post_init__(self):
        if np.any(np.asarray(self.P) <= 0.0):
            raise GasDomainError("pressure must be positive")

    def as_array(self) -> np.ndarray:
        return np.array([self.U1, self.U2, self.U3, self.P, self.S], dtype=float)

    def density(self, g: GasConstants):
        return density_from_PS(self.P, self.S, g)


def _check_pressure(P):
    if np.any(np.asarray(P) <= 0.0):
        raise GasDomainError("non-positive pressure")


def density_from_PS(P, S, g: GasConstants):
    """Density solving ``P = A rho**gamma exp(S/c_v)``."""
    _check_pressure(P)
    return (np.asarray(P) * np.exp(-np.asarray(S) / g.c_v) / g.A) ** (1.0 / g.gamma)


def pressure_from_rhoS(rho, S, g: GasConstants):
    return g.A * np.asarray(rho) ** g.gamma * np.exp(np.asarray(S) / g.c_v)


def entropy_from_rhoP(rho, P, g: GasConstants):
    return g.c_v * np.log(np.asarray(P) / (g.A * np.asarray(rho) ** g.gamma))


def sound_speed_sq(P, S, g: GasConstants):
    return g.gamma * np.asarray(P) / density_from_PS(P, S, g)


def enthalpy(P, S, g: GasConstants):
    """Specific enthalpy gamma/(gamma-1) P/rho."""
    return g.gamma / (g.gamma - 1.0) * np.asarray(P) / density_from_PS(P, S, g)


def pressure_from_enthalpy(h, S, g: GasConstants):
    """Invert ``enthalpy`` at fixed entropy (closed form)."""
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0.0):
        raise GasDomainError("non-positive enthalpy")
    gm = g.gamma
    base = (gm - 1.0) / gm * h / (g.A ** (1.0 / gm) * np.exp(np.asarray(S) / (gm * g.c_v)))
    return base ** (gm / (gm - 1.0))


def sound_speed(state: FlowState, g: GasConstants):
    return np.sqrt(sound_speed_sq(state.P, state.S, g))


def speed_sq(state: FlowState):
    return (np.asarray(state.U1) ** 2 + np.asarray(state.U2) ** 2
            + np.asarray(state.U3) ** 2)


def bernoulli(state: FlowState, g: GasConstants):
    return 0.5 * speed_sq(state) + enthalpy(state.P, state.S, g)


def mach(state: FlowState, g: GasConstants):
    return np.sqrt(speed_sq(state) / sound_speed_sq(state.P, state.S, g))


def radial_velocity_from_bernoulli(B, U3, varpi, P, S, g: GasConstants):
    """Radial velocity recovered from the Bernoulli function.

    ``varpi`` is the flow-angle ratio U2/U1; U1 > 0 is assumed.
    """
    num = 2.0 * (np.asarray(B) - enthalpy(P, S, g)) - np.asarray(U3) ** 2
    if np.any(num <= 0.0):
        raise GasDomainError("Bernoulli inversion gives non-positive kinetic energy")
    return np.sqrt(num / (1.0 + np.asarray(varpi) ** 2))


def critical_speed(B, g: GasConstants):
    """Speed at which |u| = c for a given Bernoulli constant."""
    return np.sqrt(2.0 * (g.gamma - 1.0) * np.asarray(B) / (g.gamma + 1.0))


def isentropic_mass_flux(U, B, S, g: GasConstants):
    """q(U) = rho U for fixed (B, S); rho from the Bernoulli relation."""
    U = np.asarray(U, dtype=float)
    h = np.asarray(B) - 0.5 * U ** 2
    P = pressure_from_enthalpy(h, S, g)
    return density_from_PS(P, S, g) * U
