"""Intracavity optical force on the wire.

Two independent routes are provided: the adiabatic form ``-hbar n grad(w0)``
and the 1D momentum-flux balance across the scatterer plane. They agree in
the dispersive limit and are cross-checked in the tests.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cavity import (CavityGeometry, FieldSolution, GaussianMode, NanowireScatterer, SolverError,
                     cavity_mode, coupling_vector, solve_cavity)
from .constants import C_LIGHT, HBAR
from .merit import OscillatorParams


class NonAdiabaticError(ValueError):
    pass


@dataclass
class ForceSample:
    position: np.ndarray
    force: np.ndarray
    photon_number: float
    input_power: float
    transmission: float = float("nan")
    valid: bool = True
    error: str = ""

    @property
    def fz(self) -> float:
        return float(self.force[2])


def maxwell_force(sol: FieldSolution) -> float:
    """Axial force from the four directional powers next to the sheet (N)."""
    right_l, left_l, right_r, left_r = sol.directional_powers
    return (right_l + left_l - right_r - left_r) / C_LIGHT


def _check_adiabatic(geom, omega_m, kappa=None):
    if omega_m is None:
        return
    kap = geom.kappa_empty if kappa is None or not np.isfinite(kappa) else kappa
    if not omega_m < 0.01 * kap:
        raise NonAdiabaticError(
            f"Omega_m = {omega_m:.3e} rad/s is not << kappa = {kap:.3e} rad/s; adiabatic force invalid")


def adiabatic_force(geom: CavityGeometry, wire: NanowireScatterer, input_power: float,
                    omega_m: float | None = None, step: float = 1e-10,
                    mode: GaussianMode | None = None) -> ForceSample:
    """Force ``-hbar n grad(w0)`` with the cavity locked on the shifted resonance."""
    mode = mode or cavity_mode(geom)
    _check_adiabatic(geom, omega_m)
    sol = solve_cavity(geom, wire, input_power, mode=mode, with_linewidth=False)
    grad = coupling_vector(geom, wire, step, mode=mode)
    force = -HBAR * sol.photon_number * grad
    return ForceSample(np.array(wire.tip_position, dtype=float), force, sol.photon_number,
                       input_power, sol.transmission)


def force_vector(geom, wire, input_power, step=1e-10, mode=None) -> ForceSample:
    """Map force assembly: transverse parts from the adiabatic form, F_z from
    the momentum balance (the 1D model only yields the axial flux)."""
    mode = mode or cavity_mode(geom)
    sol = solve_cavity(geom, wire, input_power, mode=mode, with_linewidth=False)
    grad = coupling_vector(geom, wire, step, mode=mode)
    force = -HBAR * sol.photon_number * grad
    force[2] = maxwell_force(sol)
    return ForceSample(np.array(wire.tip_position, dtype=float), force, sol.photon_number,
                       input_power, sol.transmission)


@dataclass
class ForceProfile:
    """Axial force samples on a z grid for one or several input powers."""
    z: np.ndarray
    input_powers: np.ndarray
    fz: np.ndarray              # (n_powers, n_z)
    photon_number: np.ndarray   # (n_powers, n_z)
    transmission: np.ndarray    # (n_powers, n_z)
    valid: np.ndarray           # (n_z,) bool
    errors: list
    nodes: np.ndarray
    antinodes: np.ndarray
    wavelength: float
    adiabatic_fz: np.ndarray | None = None

    @property
    def samples(self) -> list:
        out = []
        for ip, p in enumerate(self.input_powers):
            for iz, z in enumerate(self.z):
                out.append(ForceSample(np.array([np.nan, np.nan, z]), np.array([0.0, 0.0, self.fz[ip, iz]]),
                                       self.photon_number[ip, iz], p, self.transmission[ip, iz],
                                       bool(self.valid[iz]), self.errors[iz]))
        return out


def axial_force_profile(geom: CavityGeometry, wire_template: NanowireScatterer, z_values,
                        input_powers=(1e-6,), detuning: float | None = None,
                        with_adiabatic: bool = False, step: float = 1e-10) -> ForceProfile:
    """Sample F_z(z), re-locking the cavity at every position.

    The steady-state model is linear in power, so each position is solved
    once and scaled. Failed points are masked and carry their error text.
    ``detuning`` switches to the unlocked fixed-detuning diagnostic mode.
    """
    mode = cavity_mode(geom)
    z_values = np.asarray(z_values, dtype=float)
    powers = np.atleast_1d(np.asarray(input_powers, dtype=float))
    nz = len(z_values)
    unit_f = np.full(nz, np.nan)
    unit_n = np.full(nz, np.nan)
    trans = np.full(nz, np.nan)
    unit_fa = np.full(nz, np.nan)
    valid = np.ones(nz, dtype=bool)
    errors = [""] * nz
    for i, z in enumerate(z_values):
        w = wire_template.at(z=z)
        try:
            sol = solve_cavity(geom, w, 1.0, detuning=detuning, mode=mode, with_linewidth=False)
            unit_f[i] = maxwell_force(sol)
            unit_n[i] = sol.photon_number
            trans[i] = sol.transmission
            if with_adiabatic:
                unit_fa[i] = -HBAR * sol.photon_number * coupling_vector(geom, w, step, mode=mode)[2]
        except (SolverError, ValueError) as exc:
            valid[i] = False
            errors[i] = str(exc)
    lo, hi = z_values.min(), z_values.max()
    return ForceProfile(
        z=z_values, input_powers=powers,
        fz=np.outer(powers, unit_f), photon_number=np.outer(powers, unit_n),
        transmission=np.tile(trans, (len(powers), 1)), valid=valid, errors=errors,
        nodes=mode.node_positions(lo, hi), antinodes=mode.antinode_positions(lo, hi),
        wavelength=geom.wavelength,
        adiabatic_fz=np.outer(powers, unit_fa) if with_adiabatic else None,
    )


def gradient_frequency_shift(profile_or_z, fz=None, osc: OscillatorParams | None = None, *,
                             wavelength: float | None = None, mode_angle: float = 0.0):
    """Relative mechanical frequency shift -dFz/dz / (2k) along a force profile.

    ``mode_angle`` is the angle between the vibration direction and the
    optical axis; the axial stiffness projects as cos^2 of it.
    Returns ``(z, shift)``; ``shift`` has one row per input power when a
    :class:`ForceProfile` is given.
    """
    if isinstance(profile_or_z, ForceProfile):
        prof = profile_or_z
        z, forces, wavelength = prof.z, prof.fz, prof.wavelength
    else:
        z, forces = np.asarray(profile_or_z, dtype=float), np.asarray(fz, dtype=float)
    if osc is None:
        raise ValueError("oscillator parameters are required")
    if len(z) < 3:
        raise ValueError("need at least 3 profile points")
    pitch = np.max(np.abs(np.diff(z)))
    if wavelength is not None and pitch > wavelength / 40:
        raise ValueError(f"profile step {pitch:.3e} m is coarser than wavelength/40")
    dfdz = np.gradient(forces, z, axis=-1)
    return z, -dfdz * math.cos(mode_angle) ** 2 / (2.0 * osc.stiffness)


def shift_from_gradient(dfz_dz: float, osc: OscillatorParams, mode_angle: float = 0.0) -> float:
    return -dfz_dz * math.cos(mode_angle) ** 2 / (2.0 * osc.stiffness)


def photothermal_force(absorbed_power, omega, tau=1e-3, coefficient=0.0):
    """Delayed photothermal force (N, complex, lock-in phasor convention).

    First-order low-pass response to the absorbed power; at mechanical
    frequencies with ``omega * tau >> 1`` it sits almost fully in quadrature.
    """
    return coefficient * absorbed_power / (1.0 + 1j * omega * tau)


def extremum_asymmetry(fz) -> float:
    """(max - |min|) / max(max, |min|) for a force profile."""
    hi, lo = float(np.nanmax(fz)), float(np.nanmin(fz))
    return (hi - abs(lo)) / max(hi, abs(lo))
