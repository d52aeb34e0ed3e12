"""Steady-state optics of a Fabry-Perot microcavity holding a thin scatterer.

The three-dimensional wire/mode overlap is collapsed onto a one-dimensional
thin sheet sitting at the wire's axial position. The sheet strength
``zeta_eff`` carries all transverse and insertion dependence, so a single
transfer-matrix solve gives the resonance, linewidth and every power channel.

Conventions
-----------
* Wire positions are in the cavity frame: origin at the cavity midpoint on
  the optical axis, ``z`` along the axis (pump enters through mirror 1 at
  ``z = -L/2`` and travels towards ``+z``), ``y`` is the vertical insertion
  axis, ``x`` the remaining transverse axis.
* Fields are power-normalised amplitudes, ``|a|**2`` in watts.
* Mirror reflectivities are real, ``r = sqrt(1 - t - l)``. A common mirror
  phase is absorbed into the length origin so that the empty cavity is
  resonant at exactly ``2 pi c / wavelength``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import OptimizeWarning, brentq, curve_fit
from scipy.special import erfc

from .constants import C_LIGHT, HBAR, TWO_PI
from .merit import OscillatorParams, thermal_spread


class SolverError(RuntimeError):
    """Raised when a cavity solve cannot be completed."""


@dataclass(frozen=True)
class CavityGeometry:
    length: float
    roc1: float
    roc2: float
    wavelength: float
    t1: float
    t2: float
    l1: float = 0.0
    l2: float = 0.0

    def __post_init__(self):
        if self.length <= 0 or self.wavelength <= 0:
            raise ValueError("length and wavelength must be positive")
        if not self.length < self.roc1 + self.roc2:
            raise ValueError("unstable geometry: length must be below roc1 + roc2")
        for t, l in ((self.t1, self.l1), (self.t2, self.l2)):
            if not (0.0 < t < 1.0) or not (0.0 <= l < 1.0) or t + l >= 1.0:
                raise ValueError("mirror transmission/loss must satisfy 0 < t, 0 <= l, t + l < 1")

    @property
    def round_trip_loss(self) -> float:
        return self.t1 + self.t2 + self.l1 + self.l2

    @property
    def finesse(self) -> float:
        return TWO_PI / self.round_trip_loss

    @property
    def omega0(self) -> float:
        """Empty-cavity resonance (rad/s), equal to the laser pulsation."""
        return TWO_PI * C_LIGHT / self.wavelength

    @property
    def k0(self) -> float:
        return TWO_PI / self.wavelength

    @property
    def fsr(self) -> float:
        """Free spectral range in rad/s."""
        return math.pi * C_LIGHT / self.length

    @property
    def kappa_empty(self) -> float:
        """Bare cavity energy decay rate from the mirror budget (rad/s)."""
        return self.fsr / self.finesse

    @property
    def mode_order(self) -> int:
        return int(round(self.k0 * self.length / math.pi))

    @property
    def mirror_phase(self) -> float:
        # per-mirror phase making 2 k0 L + 2 phi a multiple of 2 pi
        return math.pi * self.mode_order - self.k0 * self.length

    @property
    def r1(self) -> float:
        return math.sqrt(1.0 - self.t1 - self.l1)

    @property
    def r2(self) -> float:
        return math.sqrt(1.0 - self.t2 - self.l2)

    @property
    def linewidth_length(self) -> float:
        """Full width of the resonance expressed as a cavity length change (m)."""
        return self.wavelength / (2.0 * self.finesse)

    @classmethod
    def from_finesse(cls, finesse, *, length, roc1, roc2, wavelength,
                     transmission_share=0.5, loss_share=0.0, asymmetry=0.5):
        """Build mirrors reproducing ``finesse``.

        ``loss_share`` is the fraction of the round-trip budget lost in the
        coatings; ``asymmetry`` is the fraction of the transmission budget on
        mirror 1 (the pumped side).
        """
        budget = TWO_PI / finesse
        t_tot = budget * (1.0 - loss_share)
        l_tot = budget * loss_share
        return cls(length=length, roc1=roc1, roc2=roc2, wavelength=wavelength,
                   t1=t_tot * asymmetry, t2=t_tot * (1.0 - asymmetry),
                   l1=l_tot / 2.0, l2=l_tot / 2.0)


@dataclass(frozen=True)
class GaussianMode:
    waist: float
    wavenumber: float
    node_phase: float

    @property
    def period(self) -> float:
        return math.pi / self.wavenumber

    def intensity_profile(self, z):
        """Empty-cavity standing-wave intensity, 0 at nodes and 1 at antinodes."""
        return np.sin(self.wavenumber * np.asarray(z) - self.node_phase) ** 2

    def node_positions(self, z_min, z_max):
        n0 = math.ceil((self.wavenumber * z_min - self.node_phase) / math.pi)
        n1 = math.floor((self.wavenumber * z_max - self.node_phase) / math.pi)
        return np.array([(n * math.pi + self.node_phase) / self.wavenumber for n in range(n0, n1 + 1)])

    def antinode_positions(self, z_min, z_max):
        shifted = self.node_positions(z_min - self.period / 2, z_max + self.period / 2) + self.period / 2
        return shifted[(shifted >= z_min) & (shifted <= z_max)]


@dataclass(frozen=True)
class NanowireScatterer:
    zeta0: complex
    radius: float = 65e-9
    tip_position: tuple = (0.0, -np.inf, 0.0)

    def __post_init__(self):
        if complex(self.zeta0).imag < 0:
            raise ValueError("Im(zeta0) must be >= 0 (scattering loss)")

    def at(self, x=None, y=None, z=None) -> "NanowireScatterer":
        px, py, pz = self.tip_position
        return replace(self, tip_position=(px if x is None else x, py if y is None else y, pz if z is None else z))

    @property
    def x(self):
        return self.tip_position[0]

    @property
    def y(self):
        return self.tip_position[1]

    @property
    def z(self):
        return self.tip_position[2]


@dataclass
class FieldSolution:
    resonance_shift: float
    equivalent_length_shift: float
    linewidth: float
    transmission: float
    reflection: float
    scatter_fraction: float
    mirror_loss_fraction: float
    photon_number: float
    directional_powers: tuple
    input_power: float
    detuning: float
    zeta_eff: complex
    local_intensity: float
    fit_residual: float = float("nan")

    @property
    def scattered_power(self) -> float:
        return self.scatter_fraction * self.input_power


def gaussian_waist(geom: CavityGeometry) -> float:
    """Waist of the TEM00 mode using the mean mirror curvature."""
    r_mean = 0.5 * (geom.roc1 + geom.roc2)
    g = 1.0 - geom.length / r_mean
    if not -1.0 < g < 1.0:
        raise ValueError(f"unstable resonator, g = {g:.4f}")
    w0_sq = geom.length * geom.wavelength / math.pi * math.sqrt((1.0 + g) / (4.0 * (1.0 - g)))
    return math.sqrt(w0_sq)


def cavity_mode(geom: CavityGeometry) -> GaussianMode:
    # empty-cavity intensity ~ cos^2(k z - pi q / 2); written as sin^2(k z - phase)
    q = geom.mode_order
    node_phase = math.remainder(math.pi * q / 2.0 + math.pi / 2.0, math.pi)
    return GaussianMode(waist=gaussian_waist(geom), wavenumber=geom.k0, node_phase=node_phase)


def insertion_fraction(y_tip, waist):
    """Fraction of the mode overlapped by a wire occupying ``y >= y_tip``."""
    return 0.5 * erfc(math.sqrt(2.0) * np.asarray(y_tip, dtype=float) / waist)


def effective_polarizability(wire: NanowireScatterer, mode: GaussianMode) -> complex:
    x, y, _ = wire.tip_position
    envelope = math.exp(-2.0 * x * x / mode.waist ** 2)
    return complex(wire.zeta0) * envelope * float(insertion_fraction(y, mode.waist))


def sheet_coefficients(zeta):
    t = 1.0 / (1.0 - 1j * zeta)
    return t, 1j * zeta * t


class _Fields:
    """Amplitudes of the transfer-matrix solve at one or many frequencies."""

    def __init__(self, geom, z, zeta, omega, input_power):
        if not (-geom.length / 2 < z < geom.length / 2):
            raise SolverError(f"wire z = {z:.3e} m lies outside the cavity")
        k = np.asarray(omega, dtype=float) / C_LIGHT
        d1 = geom.length / 2 + z
        d2 = geom.length / 2 - z
        phase = np.exp(1j * geom.mirror_phase)
        rho1 = geom.r1 * phase
        rho2 = geom.r2 * phase
        ts, rs = sheet_coefficients(zeta)
        e1 = np.exp(1j * k * d1)
        e2 = np.exp(1j * k * d2)
        x = rho2 * e2 * e2
        c_over_a = ts / (1.0 - rs * x)
        reflect_right = rs + ts * x * c_over_a
        self.round_trip = rho1 * e1 * e1 * reflect_right
        a_in = math.sqrt(input_power)
        big_a = math.sqrt(geom.t1) * a_in / (1.0 - self.round_trip)
        self.a_s = big_a * e1
        self.b_s = self.a_s * reflect_right
        self.c_s = self.a_s * c_over_a
        self.d_s = self.c_s * x
        self.trans = math.sqrt(geom.t2) * self.c_s * e2
        b_mirror = self.b_s * e1
        self.refl = -geom.r1 * np.conj(phase) * a_in + math.sqrt(geom.t1) * b_mirror
        self.e_sheet = self.a_s + self.b_s
        p_in = input_power
        self.mirror_loss = geom.l1 * (p_in + np.abs(b_mirror) ** 2) + geom.l2 * np.abs(self.c_s) ** 2
        self.scatter = 2.0 * complex(zeta).imag * np.abs(self.e_sheet) ** 2
        self.stored_energy = (d1 * (np.abs(self.a_s) ** 2 + np.abs(self.b_s) ** 2)
                              + d2 * (np.abs(self.c_s) ** 2 + np.abs(self.d_s) ** 2)) / C_LIGHT


def round_trip_phase(geom, z, zeta, detuning):
    f = _Fields(geom, z, zeta, geom.omega0 + np.asarray(detuning), 1.0)
    return np.angle(f.round_trip)


def find_resonance(geom: CavityGeometry, z: float, zeta: complex) -> float:
    """Detuning (rad/s) of the cavity resonance from the empty-cavity one."""
    half = geom.fsr / 4.0
    fun = lambda d: float(round_trip_phase(geom, z, zeta, d))
    lo, hi = -half, half
    f_lo, f_hi = fun(lo), fun(hi)
    if f_lo * f_hi > 0:
        raise SolverError(f"resonance not bracketed in [{lo:.4e}, {hi:.4e}] rad/s "
                          f"(phases {f_lo:.3f}, {f_hi:.3f})")
    return brentq(fun, lo, hi, xtol=1e-12 * geom.omega0, rtol=4 * np.finfo(float).eps, maxiter=200)


def _lorentzian(d, amp, center, width, offset):
    return amp / (1.0 + (2.0 * (d - center) / width) ** 2) + offset


def fit_linewidth(geom, z, zeta, center, n_points=201, span=5.0):
    """Least-squares Lorentzian fit of the transmission around ``center``.

    Returns ``(kappa, rms residual relative to the peak)``.
    """
    kap0 = geom.kappa_empty
    d = center + np.linspace(-span * kap0, span * kap0, n_points)
    f = _Fields(geom, z, zeta, geom.omega0 + d, 1.0)
    trans = np.abs(f.trans) ** 2
    peak = trans.max()
    p0 = (peak, center, kap0, 0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        popt, _ = curve_fit(_lorentzian, d, trans, p0=p0, maxfev=2000)
    resid = trans - _lorentzian(d, *popt)
    return abs(popt[2]), float(np.sqrt(np.mean(resid ** 2)) / peak)


def analytic_linewidth(geom, z, zeta, center):
    """Linewidth from the effective round trip ``rho`` at resonance.

    With ``rho ~ |rho| exp(i tau delta)`` the intracavity enhancement
    ``1/|1 - rho|^2`` halves at ``delta = (1 - |rho|) / (tau sqrt|rho|)``.
    Three field evaluations instead of a lineshape fit; used for maps.
    """
    h = 1e-3 * geom.kappa_empty
    f = _Fields(geom, z, zeta, geom.omega0 + center + np.array([-h, 0.0, h]), 1.0)
    rho = f.round_trip
    tau = float(np.angle(rho[2] / rho[0])) / (2.0 * h)
    mag = float(abs(rho[1]))
    return 2.0 * (1.0 - mag) / (tau * math.sqrt(mag))


def solve_cavity(geom: CavityGeometry, wire: NanowireScatterer | None, input_power: float = 1e-6,
                 detuning: float | None = None, mode: GaussianMode | None = None,
                 with_linewidth: bool = True) -> FieldSolution:
    """Solve the cavity with the wire in place.

    ``detuning=None`` locks the drive onto the (shifted) resonance; a number
    is a fixed laser detuning (rad/s) from the empty-cavity resonance.
    """
    mode = mode or cavity_mode(geom)
    if wire is None:
        zeta, z = 0j, 0.0
    else:
        zeta, z = effective_polarizability(wire, mode), wire.z
        if wire.radius > geom.wavelength / 4:
            warnings.warn("wire radius exceeds wavelength/4; thin-sheet model is questionable")
    shift = find_resonance(geom, z, zeta)
    drive = shift if detuning is None else detuning
    omega = geom.omega0 + drive
    f = _Fields(geom, z, zeta, omega, input_power)
    if with_linewidth:
        kappa, resid = fit_linewidth(geom, z, zeta, shift)
    else:
        kappa, resid = float("nan"), float("nan")
    powers = tuple(float(abs(v) ** 2) for v in (f.a_s, f.b_s, f.c_s, f.d_s))
    return FieldSolution(
        resonance_shift=shift,
        equivalent_length_shift=-geom.length * shift / geom.omega0,
        linewidth=kappa,
        transmission=float(abs(f.trans) ** 2) / input_power,
        reflection=float(abs(f.refl) ** 2) / input_power,
        scatter_fraction=float(f.scatter) / input_power,
        mirror_loss_fraction=float(f.mirror_loss) / input_power,
        photon_number=float(f.stored_energy) / (HBAR * omega),
        directional_powers=powers,
        input_power=input_power,
        detuning=drive,
        zeta_eff=zeta,
        local_intensity=float(abs(f.e_sheet) ** 2),
        fit_residual=resid,
    )


def resonance_shift_at(geom, wire, mode=None, position=None):
    mode = mode or cavity_mode(geom)
    w = wire if position is None else wire.at(*position)
    return find_resonance(geom, w.z, effective_polarizability(w, mode))


def coupling_vector(geom, wire, step=1e-9, mode=None):
    """Gradient of the resonance pulsation w.r.t. wire position (rad/s/m)."""
    if step <= 0 or step > geom.wavelength / 20:
        raise ValueError("step must be positive and small compared to the wavelength")
    mode = mode or cavity_mode(geom)
    grad = []
    base = np.array(wire.tip_position, dtype=float)
    for axis in range(3):
        if not np.isfinite(base[axis]):
            grad.append(0.0)
            continue
        plus, minus = base.copy(), base.copy()
        plus[axis] += step
        minus[axis] -= step
        wp = resonance_shift_at(geom, wire, mode, tuple(plus))
        wm = resonance_shift_at(geom, wire, mode, tuple(minus))
        grad.append((wp - wm) / (2 * step))
    return np.array(grad)


def scatter_power(sol: FieldSolution) -> float:
    """Power (W) removed from the cavity mode by the wire."""
    return 2.0 * sol.zeta_eff.imag * sol.local_intensity


def calibrate_zeta0(geom: CavityGeometry, length_shift: float, imag_part: float = 0.0) -> float:
    """Real part of zeta0 giving an equivalent length shift ``length_shift`` (m)
    at a fully inserted antinode."""
    mode = cavity_mode(geom)
    z_a = mode.antinode_positions(-mode.period, mode.period)
    z_a = z_a[np.argmin(np.abs(z_a))]

    def mismatch(re):
        shift = find_resonance(geom, z_a, complex(re, imag_part))
        return -geom.length * shift / geom.omega0 - length_shift

    guess = length_shift * geom.k0 / 2.0
    return brentq(mismatch, 0.2 * guess, 5.0 * guess, xtol=1e-15, rtol=1e-14)


def thermal_linewidth_broadening(big_g: float, osc: OscillatorParams) -> float:
    """Largest resonance jitter caused by the wire's thermal motion (rad/s)."""
    return abs(big_g) * thermal_spread(osc)
