"""Scalar optomechanical figures of merit.

All inputs and outputs use angular frequencies; convert with
:func:`nanocavity_twin.constants.hz_to_rad` at the boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .constants import HBAR, K_B


@dataclass(frozen=True)
class OscillatorParams:
    effective_mass: float
    omega_m: float
    quality: float = 5000.0
    temperature: float = 300.0

    def __post_init__(self):
        if self.effective_mass <= 0 or self.omega_m <= 0 or self.quality <= 0:
            raise ValueError("mass, omega_m and quality must be strictly positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def gamma(self) -> float:
        return self.omega_m / self.quality

    @property
    def stiffness(self) -> float:
        return self.effective_mass * self.omega_m ** 2


@dataclass(frozen=True)
class CouplingFigures:
    g0: float
    big_g: float
    delta_x_zpf: float
    kappa: float = float("nan")
    omega_m: float = float("nan")

    @property
    def ratio(self) -> float:
        """g0 / Omega_m."""
        return self.g0 / self.omega_m

    @property
    def ultrastrong(self) -> bool:
        return self.g0 > self.omega_m / 2.0


def zero_point_motion(osc: OscillatorParams) -> float:
    return math.sqrt(HBAR / (2.0 * osc.effective_mass * osc.omega_m))


def thermal_spread(osc: OscillatorParams) -> float:
    """RMS thermal displacement sqrt(kB T / k)."""
    return math.sqrt(K_B * osc.temperature / (osc.effective_mass * osc.omega_m ** 2))


def single_photon_coupling(big_g: float, osc: OscillatorParams, kappa: float = float("nan")) -> CouplingFigures:
    if not math.isfinite(big_g):
        raise ValueError("coupling strength must be finite")
    zpf = zero_point_motion(osc)
    g = abs(big_g)
    return CouplingFigures(g0=g * zpf, big_g=g, delta_x_zpf=zpf, kappa=kappa, omega_m=osc.omega_m)


def single_photon_force_displacement(fig: CouplingFigures, osc: OscillatorParams):
    """Force of one intracavity photon and the static displacement it causes.

    The force is returned with a negative sign: it pushes the oscillator
    towards decreasing cavity resonance along the coupling gradient.
    """
    force = -HBAR * fig.g0 / fig.delta_x_zpf if fig.delta_x_zpf > 0 else 0.0
    displacement = 2.0 * fig.g0 / osc.omega_m * fig.delta_x_zpf
    return force, displacement


def cooperativities(fig: CouplingFigures, osc: OscillatorParams, kappa: float | None = None):
    """Parametric single-photon cooperativity 2 g0^2/(Omega kappa) and the
    standard one g0^2/(Gamma kappa)."""
    kap = fig.kappa if kappa is None else kappa
    if not kap > 0:
        raise ValueError("kappa must be positive")
    parametric = 2.0 * fig.g0 ** 2 / (osc.omega_m * kap)
    standard = fig.g0 ** 2 / (osc.gamma * kap)
    return parametric, standard


def single_photon_shift(fig: CouplingFigures, osc: OscillatorParams) -> float:
    """Cavity shift g0 * dx1 / dx_zpf produced by one photon's static push."""
    _, dx1 = single_photon_force_displacement(fig, osc)
    return fig.g0 * dx1 / fig.delta_x_zpf


def merit_report(big_g: float, osc: OscillatorParams, kappa: float) -> dict:
    """Every headline figure for one configuration, angular units."""
    fig = single_photon_coupling(big_g, osc, kappa)
    force, dx1 = single_photon_force_displacement(fig, osc)
    c_par, c_std = cooperativities(fig, osc)
    return {
        "delta_x_zpf": fig.delta_x_zpf,
        "thermal_spread": thermal_spread(osc),
        "big_g": fig.big_g,
        "g0": fig.g0,
        "g0_over_omega_m": fig.ratio,
        "ultrastrong": fig.ultrastrong,
        "single_photon_force": force,
        "single_photon_displacement": dx1,
        "displacement_over_zpf": dx1 / fig.delta_x_zpf,
        "thermal_over_zpf": thermal_spread(osc) / fig.delta_x_zpf,
        "single_photon_shift": single_photon_shift(fig, osc),
        "thermal_broadening": big_g * thermal_spread(osc),
        "kappa": kappa,
        "parametric_cooperativity": c_par,
        "standard_cooperativity": c_std,
    }
