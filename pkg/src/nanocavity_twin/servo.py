"""Cavity length lock and probe-reflection readout.

Lengths are used throughout the loop: the detuning ``delta`` is the
cavity length error (m) relative to resonance with the laser, and the
corrections ``u`` are the lengths the piezos compensate, so at lock
``u_fast + u_slow`` equals the wire-induced equivalent length shift plus
the drift.

The 250 kHz dither is not sampled: its demodulated first harmonic is
evaluated in closed form from the Lorentzian transmission each time step.
"""
from __future__ import annotations

import cmath
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .constants import TWO_PI
from .mechanics import MeasurementVector


class UndersampledError(ValueError):
    pass


def lockin_demodulate(sig, sample_rate: float, frequency: float, tau: float, t0: float = 0.0):
    """Mix with ``exp(-i 2 pi f t)`` and low-pass with a first-order filter.

    The filter is the exact discretisation of ``tau dy/dt = x - y`` for a
    sample-and-hold input, starting from zero; its group delay at DC is
    ``tau``. A tone ``A cos(2 pi f t + p)`` settles to ``A/2 e^{i p}``.
    """
    if sample_rate < 10.0 * frequency:
        raise UndersampledError(f"sample rate {sample_rate:g} Hz is below 10 x {frequency:g} Hz")
    if tau <= 0:
        raise ValueError("time constant must be positive")
    x = np.asarray(sig, dtype=float)
    t = t0 + np.arange(len(x)) / sample_rate
    mixed = x * np.exp(-1j * TWO_PI * frequency * t)
    alpha = -math.expm1(-1.0 / (sample_rate * tau))
    return lfilter([alpha], [1.0, alpha - 1.0], mixed)


def lowpass_gain(offset_hz: float, tau: float) -> float:
    return 1.0 / abs(1.0 + 1j * TWO_PI * offset_hz * tau)


# ---------------------------------------------------------------- error signal

def dither_first_harmonic(x, a):
    """Demodulated first harmonic of ``T(y) = 1/(1 + y^2)`` dithered as
    ``y = x + a cos(phi)``; ``x`` and ``a`` in half-linewidth units.

    Equal to ``(1/pi) int T(x + a cos phi) cos phi dphi``.
    """
    b = 1.0 + 1j * x
    c = 1j * a
    s = cmath.sqrt(b * b - c * c)
    if s.real < 0:
        s = -s
    return 2.0 * ((1.0 - b / s) / c).real


def dither_first_harmonic_quadrature(x, a, n=256):
    phi = np.linspace(0.0, TWO_PI, n, endpoint=False)
    y = x + a * np.cos(phi)
    return float(np.mean(np.cos(phi) * 2.0 / (1.0 + y * y)))


@dataclass(frozen=True)
class ErrorSignal:
    """Dithered-transmission error signal normalised to unit slope at lock.

    ``half_width`` is the half linewidth in length (m); ``dither`` is the
    dither amplitude in length (m).
    """
    half_width: float
    dither: float

    def __post_init__(self):
        if self.half_width <= 0 or self.dither <= 0:
            raise ValueError("half width and dither must be positive")
        if self.dither > 0.3 * self.half_width:
            warnings.warn("dither amplitude is not small against the linewidth; lineshape distortion")

    @property
    def _slope(self):
        # d/dx of the first harmonic at x = 0 in closed form
        a = self.dither / self.half_width
        return -2.0 * a / (1.0 + a * a) ** 1.5

    def raw(self, delta):
        return dither_first_harmonic(delta / self.half_width, self.dither / self.half_width)

    def __call__(self, delta):
        """Error in metres: ``~ delta`` near resonance, odd in ``delta``."""
        return self.raw(delta) * self.half_width / self._slope


def synthesize_error_signal(detuning, half_width: float, dither: float):
    """Error series from a series of cavity length detunings (m)."""
    err = ErrorSignal(half_width, dither)
    return np.array([err(float(d)) for d in np.atleast_1d(detuning)])


# ---------------------------------------------------------------- lock loop

@dataclass(frozen=True)
class PIGains:
    kp: float
    ki: float
    range: float


@dataclass(frozen=True)
class LockConfig:
    demod_frequency: float = 250e3
    demod_time_constant: float = 5e-6
    control_rate: float = 100e3
    pi_fast: PIGains = PIGains(0.0, TWO_PI * 2e3, 100e-9)
    pi_slow: PIGains = PIGains(0.0, TWO_PI * 5.0, 5e-6)
    slow_slew: float = 1e-6
    loop_bandwidth_target: float = 2e3
    dither: float = 0.05e-9
    error_noise: float = 0.0
    lock_loss_periods: int = 10
    substeps: int = 1

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate

    def closed_loop_correction_gain(self, freq: float, with_filter: bool = True) -> float:
        """|u/d| of the discrete loop at ``freq`` (Hz), delay and sampling included."""
        z = cmath.exp(1j * TWO_PI * freq * self.dt)
        lf = self.pi_fast.kp + self.pi_fast.ki * self.dt / (1.0 - 1.0 / z)
        ls = 1.0 + self.pi_slow.kp + self.pi_slow.ki * self.dt / (1.0 - 1.0 / z)
        filt = 1.0 / (1.0 + 1j * TWO_PI * freq * self.demod_time_constant) if with_filter else 1.0
        open_loop = lf * ls * filt / z
        return abs(open_loop / (1.0 + open_loop))


@dataclass(frozen=True)
class DriftModel:
    """Slow cavity length drift: ramp plus one sinusoid (m)."""
    rate: float = 0.0
    amplitude: float = 0.0
    period: float = 1200.0
    phase: float = 0.0
    offset: float = 0.0

    def __call__(self, t):
        return self.offset + self.rate * t + self.amplitude * np.sin(TWO_PI * t / self.period + self.phase)


@dataclass
class LockState:
    fast: float = 0.0
    slow: float = 0.0
    filtered: float = 0.0
    out_count: int = 0
    locked: bool = True


@dataclass
class LockResult:
    t: np.ndarray
    fast: np.ndarray
    slow: np.ndarray
    residual: np.ndarray
    locked: bool
    loss_time: float
    state: LockState = field(repr=False, default_factory=LockState)

    @property
    def correction(self):
        return self.fast + self.slow

    @property
    def residual_rms(self) -> float:
        return float(np.sqrt(np.mean(self.residual ** 2)))


def run_lock(disturbance, drift, lock: LockConfig, duration: float, half_width: float,
             seed=None, state: LockState | None = None, t0: float = 0.0) -> LockResult:
    """Simulate the dual PI lock for ``duration`` seconds.

    ``disturbance(t)`` and ``drift(t)`` return length offsets (m) and accept
    arrays. The fast integrator acts on the filtered error; the slow one
    integrates the fast correction to keep it centred, with a bounded slew.
    Lock loss (|residual| above the half width for more than
    ``lock_loss_periods`` control periods) is reported, not raised.
    """
    n = int(round(duration * lock.control_rate))
    m = max(1, int(lock.substeps))
    dt = lock.dt
    h = dt / m
    t_sub = t0 + (np.arange(n * m) + 1) * h
    plant = np.asarray(disturbance(t_sub), dtype=float) + np.asarray(drift(t_sub), dtype=float)
    plant = np.broadcast_to(plant, t_sub.shape)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, lock.error_noise, n) if lock.error_noise > 0 else np.zeros(n)
    err = ErrorSignal(half_width, lock.dither)
    beta = -math.expm1(-h / lock.demod_time_constant)
    kpf, kif, rf = lock.pi_fast.kp, lock.pi_fast.ki * dt, lock.pi_fast.range
    kps, kis, rs = lock.pi_slow.kp, lock.pi_slow.ki * dt, lock.pi_slow.range
    slew = lock.slow_slew * dt

    st = state if state is not None else LockState()
    fast_i, slow, y = st.fast, st.slow, st.filtered
    out_count, locked = st.out_count, st.locked
    loss_time = float("nan") if locked else t0
    fast_tr = np.empty(n)
    slow_tr = np.empty(n)
    resid = np.empty(n * m)
    fast_out = fast_i
    k = 0
    for i in range(n):
        u = fast_out + slow
        for _ in range(m):
            d = plant[k] - u
            resid[k] = d
            y += beta * (err(d) - y)
            k += 1
        e = y + noise[i]
        fast_i = min(max(fast_i + kif * e, -rf), rf)
        fast_out = min(max(fast_i + kpf * e, -rf), rf)
        step = kis * fast_out + kps * (fast_out - fast_tr[i - 1] if i else 0.0)
        slow = min(max(slow + min(max(step, -slew), slew), -rs), rs)
        fast_tr[i] = fast_out
        slow_tr[i] = slow
        if abs(d) > half_width:
            out_count += 1
            if locked and out_count > lock.lock_loss_periods:
                locked = False
                loss_time = t0 + (i + 1) * dt
        else:
            out_count = 0
    new_state = LockState(fast_i, slow, y, out_count, locked)
    t = t0 + (np.arange(n) + 1) * dt
    return LockResult(t, fast_tr, slow_tr, resid[m - 1::m], locked, loss_time, new_state)


# ---------------------------------------------------------------- probe readout

@dataclass(frozen=True)
class ProbeReadoutModel:
    probe_wavelength: float = 633e-9
    visibility: float = 0.8
    phase_offset: float = 0.0
    envelope_waist: float = 2e-6
    mean_power: float = 1e-6
    gradient_threshold: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must lie in [0, 1]")
        if self.envelope_waist <= 0 or self.probe_wavelength <= 0 or self.mean_power < 0:
            raise ValueError("invalid probe model")

    @property
    def k(self) -> float:
        return TWO_PI / self.probe_wavelength


@dataclass
class ProbeReading:
    power: float
    gradient: np.ndarray   # (dP/dx, dP/dz) in W/m
    e_beta: MeasurementVector

    @property
    def defined(self) -> bool:
        return self.e_beta.defined


def probe_power(x, z, model: ProbeReadoutModel):
    fringe = 1.0 + model.visibility * np.cos(2.0 * model.k * np.asarray(z) + model.phase_offset)
    return model.mean_power * fringe * np.exp(-2.0 * np.asarray(x) ** 2 / model.envelope_waist ** 2)


def probe_reflection(position, model: ProbeReadoutModel) -> ProbeReading:
    """Probe reflection, its analytic gradient and the measurement vector at
    ``position = (x, z)``."""
    x, z = float(position[0]), float(position[1])
    env = math.exp(-2.0 * x * x / model.envelope_waist ** 2)
    arg = 2.0 * model.k * z + model.phase_offset
    fringe = 1.0 + model.visibility * math.cos(arg)
    power = model.mean_power * fringe * env
    d_x = power * (-4.0 * x / model.envelope_waist ** 2)
    d_z = -model.mean_power * env * model.visibility * 2.0 * model.k * math.sin(arg)
    grad = np.array([d_x, d_z])
    return ProbeReading(power, grad, MeasurementVector.from_gradient(grad, threshold=model.gradient_threshold))


def measure_rejection(lock: LockConfig, frequency: float, half_width: float, amplitude: float = 1e-11,
                      duration: float = 0.02) -> float:
    """Simulated |u/d| of the correction path for a sinusoidal length
    disturbance at ``frequency`` (Hz).

    The steady-state half of the correction record is fitted with a sine and
    cosine. At exactly half the control rate only one quadrature survives
    sampling, so two runs with the disturbance phase shifted by 90 degrees
    are combined.
    """
    nyquist = abs(frequency * lock.dt - 0.5) < 1e-9
    comps = []
    for phase in ((0.0, 0.5 * math.pi) if nyquist else (0.0,)):
        res = run_lock(lambda t: amplitude * np.sin(TWO_PI * frequency * t + phase), DriftModel(), lock,
                       duration, half_width)
        half = len(res.t) // 2
        t, u = res.t[half:], res.correction[half:]
        basis = np.column_stack([np.cos(TWO_PI * frequency * t), np.sin(TWO_PI * frequency * t)])
        coef = np.linalg.lstsq(basis, u - u.mean(), rcond=None)[0]
        comps.append(coef)
    if nyquist:
        return float(math.hypot(comps[0][0], comps[1][0]) / amplitude)
    return float(np.hypot(*comps[0]) / amplitude)
