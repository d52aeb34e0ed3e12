"""Two-mode nanowire mechanics.

Vectors in the vibration plane are ``(x, z)`` pairs; an angle ``theta``
is measured from the optical axis ``e_z`` towards ``e_x`` so the unit
vector is ``(sin theta, cos theta)``.

Complex amplitudes follow the lock-in convention ``x(t) = Re(X e^{+i W t})``
(what a demodulator mixing with ``e^{-i W t}`` returns), hence the response
lags by 90 degrees at resonance and the susceptibility reads
``1 / (M (W_i^2 - W^2 + i W G_i))``.

PSDs are one-sided, in m^2/Hz, with a Langevin force PSD of ``4 kB T M G``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, signal

from .constants import K_B, TWO_PI


def unit(theta):
    return np.array([math.sin(theta), math.cos(theta)])


@dataclass(frozen=True)
class ModePair:
    omega1: float
    omega2: float
    theta1: float
    gamma1: float
    gamma2: float
    effective_mass: float
    temperature: float = 300.0

    def __post_init__(self):
        if min(self.omega1, self.omega2, self.gamma1, self.gamma2, self.effective_mass) <= 0:
            raise ValueError("frequencies, damping rates and mass must be positive")

    @classmethod
    def nominal(cls, f1=50e3, split=0.2, quality=5000.0, theta1_deg=20.0,
                mass=1e-15, temperature=300.0):
        w1 = TWO_PI * f1
        w2 = w1 * (1.0 + split)
        return cls(w1, w2, math.radians(theta1_deg), w1 / quality, w2 / quality, mass, temperature)

    @property
    def e1(self):
        return unit(self.theta1)

    @property
    def e2(self):
        return unit(self.theta1 + math.pi / 2)

    def omega(self, i):
        return (self.omega1, self.omega2)[i - 1]

    def gamma(self, i):
        return (self.gamma1, self.gamma2)[i - 1]

    def e(self, i):
        return (self.e1, self.e2)[i - 1]

    def stiffness(self, i):
        return self.effective_mass * self.omega(i) ** 2

    def quality(self, i):
        return self.omega(i) / self.gamma(i)

    def with_omegas(self, omega1, omega2):
        return replace(self, omega1=omega1, omega2=omega2)


@dataclass(frozen=True)
class MeasurementVector:
    angle_beta: float
    gain: float = 1.0
    noise_floor: float = 0.0
    defined: bool = True

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("measurement gain must be positive")

    @property
    def direction(self):
        return unit(self.angle_beta)

    @classmethod
    def from_gradient(cls, grad, noise_floor=0.0, threshold=0.0):
        g = np.asarray(grad, dtype=float)
        norm = float(np.hypot(*g))
        if norm <= threshold or norm == 0.0:
            return cls(0.0, 1.0, noise_floor, defined=False)
        return cls(math.atan2(g[0], g[1]), norm, noise_floor)


@dataclass(frozen=True)
class ForcePhasor:
    in_phase: np.ndarray
    quadrature: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def complex_vector(self):
        # a quadrature (lagging) force enters as -i
        return np.asarray(self.in_phase, dtype=float) - 1j * np.asarray(self.quadrature, dtype=float)

    @property
    def magnitude(self):
        return float(np.hypot(*self.in_phase))

    @property
    def angle(self):
        """Angle of the in-phase force from e_z (rad)."""
        return math.atan2(self.in_phase[0], self.in_phase[1])

    @property
    def quadrature_magnitude(self):
        return float(np.hypot(*self.quadrature))

    @classmethod
    def along(cls, magnitude, angle, quadrature=0.0, quadrature_angle=None):
        qa = angle if quadrature_angle is None else quadrature_angle
        return cls(magnitude * unit(angle), quadrature * unit(qa))


def susceptibility(modes: ModePair, i: int, omega):
    omega = np.asarray(omega, dtype=float)
    w_i, g_i = modes.omega(i), modes.gamma(i)
    return 1.0 / (modes.effective_mass * (w_i ** 2 - omega ** 2 + 1j * omega * g_i))


def _e_beta(e_beta):
    if isinstance(e_beta, MeasurementVector):
        return e_beta.direction
    if np.ndim(e_beta) == 0:
        return unit(float(e_beta))
    return np.asarray(e_beta, dtype=float)


def projected_response(modes: ModePair, e_beta, force: ForcePhasor, omega):
    """Displacement projected on ``e_beta`` for a modulated force (m, complex)."""
    eb = _e_beta(e_beta)
    df = force.complex_vector if isinstance(force, ForcePhasor) else np.asarray(force)
    out = 0.0
    for i in (1, 2):
        e_i = modes.e(i)
        out = out + (eb @ e_i) * susceptibility(modes, i, omega) * (e_i @ df)
    return out


def force_psd(modes: ModePair, i: int) -> float:
    """One-sided Langevin force PSD of mode ``i`` (N^2/Hz)."""
    return 4.0 * K_B * modes.temperature * modes.effective_mass * modes.gamma(i)


def thermal_psd(modes: ModePair, e_beta, omega, noise_floor: float | None = None):
    """One-sided PSD of the projected thermal motion (m^2/Hz) at pulsation ``omega``."""
    eb = _e_beta(e_beta)
    floor = noise_floor if noise_floor is not None else (
        e_beta.noise_floor if isinstance(e_beta, MeasurementVector) else 0.0)
    out = np.zeros_like(np.asarray(omega, dtype=float)) + floor
    for i in (1, 2):
        out = out + np.abs(susceptibility(modes, i, omega)) ** 2 * force_psd(modes, i) * (eb @ modes.e(i)) ** 2
    return out


def max_time_step(modes: ModePair) -> float:
    return TWO_PI / (20.0 * max(modes.omega1, modes.omega2))


class _ModeStepper:
    """Exact discrete propagator of one damped oscillator (state x, v)."""

    def __init__(self, omega, gamma, mass, temperature, dt):
        a = np.array([[0.0, 1.0], [-omega ** 2, -gamma]])
        self.phi = linalg.expm(a * dt)
        # zero-order-hold input; force sampled at mid-step by the caller
        self.b = np.linalg.solve(a, (self.phi - np.eye(2)) @ np.array([0.0, 1.0 / mass]))
        diffusion = 2.0 * K_B * temperature * gamma / mass
        vl = np.zeros((4, 4))
        vl[:2, :2] = -a
        vl[:2, 2:] = np.array([[0.0, 0.0], [0.0, diffusion]])
        vl[2:, 2:] = a.T
        big = linalg.expm(vl * dt)
        q = big[2:, 2:].T @ big[:2, 2:]
        self.q = 0.5 * (q + q.T)
        w, v = np.linalg.eigh(self.q)
        self.noise_map = v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))
        lam, vec = np.linalg.eig(self.phi)
        self.lam = lam[0]
        self.vec = vec[:, 0]
        self.inv_row = np.linalg.inv(vec)[0]
        self.stationary_var = np.array([K_B * temperature / (mass * omega ** 2), K_B * temperature / mass])

    def run(self, state, inputs):
        """Advance through ``inputs`` (n, 2) state increments; returns states after each step."""
        y0 = self.inv_row @ state
        u = inputs @ self.inv_row
        y, _ = signal.lfilter([1.0], [1.0, -self.lam], u, zi=np.array([self.lam * y0]))
        states = 2.0 * np.real(np.outer(y, self.vec))
        return states


@dataclass
class Trajectory:
    t: np.ndarray
    displacement: np.ndarray   # (n, 2) in (x, z)
    readout: np.ndarray
    modal: np.ndarray          # (n, 2) modal coordinates


class TrajectorySimulator:
    """Streaming two-mode Langevin integrator.

    Each eigenmode is advanced with its exact discrete propagator, so damping
    and thermal variance are free of step-size bias. State carries between
    calls to :meth:`advance`, which lets long records be produced in chunks.
    """

    def __init__(self, modes: ModePair, dt: float, seed=None, e_beta=0.0, gain=1.0,
                 readout_noise_psd=0.0, thermal=True, thermalize=False):
        if dt > max_time_step(modes) * (1 + 1e-12):
            raise ValueError(f"dt = {dt:.3e} s exceeds the stable limit {max_time_step(modes):.3e} s")
        self.modes = modes
        self.dt = dt
        self.rng = np.random.default_rng(seed)
        self.eb = _e_beta(e_beta)
        self.gain = gain
        self.readout_sigma = gain * math.sqrt(readout_noise_psd / (2.0 * dt))
        self.thermal = thermal and modes.temperature > 0
        temp = modes.temperature if self.thermal else 0.0
        self.steppers = [_ModeStepper(modes.omega(i), modes.gamma(i), modes.effective_mass, temp, dt)
                         for i in (1, 2)]
        self.states = [np.zeros(2), np.zeros(2)]
        if thermalize and self.thermal:
            for k, st in enumerate(self.steppers):
                self.states[k] = self.rng.normal(0.0, np.sqrt(st.stationary_var))
        self.time = 0.0

    def advance(self, n_steps: int, forces=None) -> Trajectory:
        """Advance ``n_steps``; ``forces`` is None, an (n, 2) array of forces
        at mid-step, or a callable ``f(t) -> (n, 2)``."""
        t_mid = self.time + (np.arange(n_steps) + 0.5) * self.dt
        if callable(forces):
            f = np.asarray(forces(t_mid), dtype=float)
        elif forces is None:
            f = None
        else:
            f = np.asarray(forces, dtype=float)
        modal = np.empty((n_steps, 2))
        for k, st in enumerate(self.steppers):
            e_k = self.modes.e(k + 1)
            inc = np.zeros((n_steps, 2))
            if f is not None:
                inc += np.outer(f @ e_k, st.b)
            if self.thermal:
                inc += self.rng.standard_normal((n_steps, 2)) @ st.noise_map.T
            states = st.run(self.states[k], inc)
            self.states[k] = states[-1].copy()
            modal[:, k] = states[:, 0]
        disp = np.outer(modal[:, 0], self.modes.e1) + np.outer(modal[:, 1], self.modes.e2)
        readout = self.gain * (disp @ self.eb)
        if self.readout_sigma > 0:
            readout = readout + self.rng.normal(0.0, self.readout_sigma, n_steps)
        t = self.time + (np.arange(n_steps) + 1) * self.dt
        self.time = float(t[-1]) if n_steps else self.time
        return Trajectory(t, disp, readout, modal)


def simulate_trajectory(modes: ModePair, forces=None, dt: float | None = None, duration: float = 0.1,
                        seed=None, e_beta=0.0, gain=1.0, readout_noise_psd=0.0,
                        thermal=True, thermalize=False) -> Trajectory:
    """Integrate the two driven, damped, thermally excited modes.

    ``forces`` may be None, a callable ``f(t) -> (n, 2)`` evaluated at the
    middle of each step, or an (n, 2) array. The readout is
    ``gain * e_beta . r(t)`` plus white noise of one-sided PSD
    ``readout_noise_psd`` (m^2/Hz).
    """
    dt = max_time_step(modes) if dt is None else dt
    n = int(round(duration / dt))
    sim = TrajectorySimulator(modes, dt, seed, e_beta, gain, readout_noise_psd, thermal, thermalize)
    return sim.advance(n, forces)
