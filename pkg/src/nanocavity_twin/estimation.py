"""Analysis chain: thermal-spectrum and response fits, triplet estimation,
peak tracking and measurement-vector calibration.

Frequencies in datasets are in Hz; every model parameter is angular.
Complex amplitudes use the lock-in convention of :mod:`.mechanics`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares
from scipy.signal import butter, sosfilt, sosfilt_zi, welch

from .constants import K_B, TWO_PI
from .mechanics import (ForcePhasor, MeasurementVector, ModePair, TrajectorySimulator,
                        max_time_step, projected_response, susceptibility, thermal_psd, unit)


class EstimationError(RuntimeError):
    pass


# ---------------------------------------------------------------- spectra

def welch_psd(readout, sample_rate: float, resolution: float):
    """One-sided Hann-window Welch PSD with 50% overlap. Returns (f, psd, n_segments)."""
    nper = int(round(sample_rate / resolution))
    if nper > len(readout):
        raise EstimationError("record shorter than one segment")
    f, p = welch(readout, fs=sample_rate, window="hann", nperseg=nper, noverlap=nper // 2,
                 detrend=False, scaling="density", return_onesided=True)
    n_seg = 1 + (len(readout) - nper) // (nper - nper // 2)
    return f, p, n_seg


def record_thermal_spectrum(modes: ModePair, e_beta=0.0, n_averages: int = 50, resolution: float = 1.0,
                            seed=None, gain: float = 1.0, readout_noise_psd: float = 0.0,
                            decimation: int = 4, chunk: int = 1 << 20):
    """Simulate a thermal record and return its Welch PSD in m^2/Hz.

    The trajectory is integrated at the stable step, passed through a
    streaming Butterworth anti-alias filter and decimated before the
    Welch estimate. Returns ``(f_hz, psd, n_segments)``.
    """
    if chunk % decimation:
        raise ValueError("chunk must be a multiple of the decimation factor")
    dt = max_time_step(modes)
    fs = 1.0 / dt
    fs_out = fs / decimation
    sim = TrajectorySimulator(modes, dt, seed=seed, e_beta=e_beta, gain=gain,
                              readout_noise_psd=readout_noise_psd, thermalize=True)
    seg = int(round(fs_out / resolution))
    n_out = seg * (n_averages + 1) // 2
    sos = butter(10, 0.8 / decimation, output="sos")
    zi = None
    out = np.empty(n_out)
    filled = 0
    while filled < n_out:
        tr = sim.advance(chunk)
        x = tr.readout / gain
        if zi is None:
            zi = sosfilt_zi(sos) * x[0]
        y, zi = sosfilt(sos, x, zi=zi)
        y = y[::decimation]
        take = min(len(y), n_out - filled)
        out[filled:filled + take] = y[:take]
        filled += take
    return welch_psd(out, fs_out, resolution)


def synthesize_thermal_spectrum(modes: ModePair, e_beta, f_hz, n_averages: int, rng=None,
                                noise_floor: float = 0.0):
    """Draw a PSD estimate with the exact chi-square statistics of an
    ``n_averages``-segment average around the analytic one-sided PSD."""
    rng = np.random.default_rng(rng)
    mean = thermal_psd(modes, e_beta, TWO_PI * np.asarray(f_hz), noise_floor=noise_floor)
    return mean * rng.gamma(n_averages, 1.0 / n_averages, size=mean.shape)


@dataclass
class ThermalFit:
    modes: ModePair
    projections: np.ndarray      # (e_beta . e_i)^2
    noise_floor: float
    covariance: np.ndarray
    parameter_names: tuple
    residual_rms: float
    iterations: int
    identifiable: tuple = (True, True)
    peak_overlap: bool = False

    @property
    def stderr(self) -> dict:
        return dict(zip(self.parameter_names, np.sqrt(np.abs(np.diag(self.covariance)))))


def _thermal_model(p, w, n_modes):
    """Model and Jacobian; p = [W_i..., log G_i..., log A_i..., log floor]."""
    ws, lg, la = p[:n_modes], p[n_modes:2 * n_modes], p[2 * n_modes:3 * n_modes]
    floor = math.exp(p[-1])
    model = np.full_like(w, floor)
    jac = np.empty((len(w), len(p)))
    w2 = w * w
    for i in range(n_modes):
        g, a = math.exp(lg[i]), math.exp(la[i])
        dd = ws[i] ** 2 - w2
        den = dd * dd + w2 * g * g
        term = a / den
        model += term
        jac[:, i] = -term / den * 4.0 * ws[i] * dd
        jac[:, n_modes + i] = -term / den * 2.0 * w2 * g * g
        jac[:, 2 * n_modes + i] = term
    jac[:, -1] = floor
    return model, jac


def _peak_guesses(f_hz, psd, max_peaks=2, min_contrast=20.0):
    """Greedy peak search: take the highest smoothed bin, exclude a guard
    band around it, repeat. A peak must rise ``min_contrast`` above the
    median level."""
    floor = float(np.median(psd))
    width = max(5, len(psd) // 2000)
    smooth = np.convolve(psd, np.ones(width) / width, mode="same")
    avail = np.ones(len(psd), dtype=bool)
    avail[[0, -1]] = False
    guesses = []
    tails = np.zeros(len(psd))
    df = f_hz[1] - f_hz[0]
    for _ in range(max_peaks):
        if not avail.any():
            break
        # contrast against the floor plus the wings of the peaks already found
        i = int(np.argmax(np.where(avail, smooth / (floor + tails), -np.inf)))
        if smooth[i] < min_contrast * (floor + tails[i]):
            break
        half = smooth[i] / 2.0
        lo = i
        while lo > 0 and smooth[lo] > half:
            lo -= 1
        hi = i
        while hi < len(smooth) - 1 and smooth[hi] > half:
            hi += 1
        fwhm = max(f_hz[hi] - f_hz[lo], 2.0 * df)
        guesses.append((f_hz[i], fwhm, smooth[i]))
        tails += smooth[i] / (1.0 + (2.0 * (f_hz - f_hz[i]) / fwhm) ** 2)
        guard = max(20.0 * fwhm, 0.02 * f_hz[i])
        avail &= np.abs(f_hz - f_hz[i]) > guard
    guesses.sort()
    return guesses, floor


def fit_thermal_spectrum(f_hz, psd, temperature: float = 300.0, prior: ModePair | None = None,
                         restarts: int = 5, seed=0, min_contrast: float = 20.0, band=None) -> ThermalFit:
    """Two-Lorentzian thermal fit of a one-sided displacement PSD.

    The model is ``sum_i A_i / ((W_i^2 - W^2)^2 + W^2 G_i^2) + floor`` with
    ``A_i = 4 kB T G_i (e_beta.e_i)^2 / M``. Because the projections on two
    orthogonal modes sum to one, the mass follows as
    ``M = 4 kB T / sum(A_i / G_i)``. Residuals are taken on the log of the
    PSD: averaged periodograms scatter multiplicatively, so every bin then
    carries the same weight.

    ``band`` limits the fit to ``(f_min, f_max)``; by default it spans the
    detected peaks with a 10 % margin, which keeps acquisition artefacts
    such as anti-alias roll-off out of the fit.
    """
    f_hz = np.asarray(f_hz, dtype=float)
    psd = np.asarray(psd, dtype=float)
    keep = (f_hz > 0) & np.isfinite(psd) & (psd > 0)
    f_hz, psd = f_hz[keep], psd[keep]
    guesses, floor0 = _peak_guesses(f_hz, psd, min_contrast=min_contrast)
    if not guesses:
        raise EstimationError("no peaks: spectrum is consistent with the noise floor alone")
    if band is None:
        band = (0.9 * guesses[0][0], 1.1 * guesses[-1][0])
    inside = (f_hz >= band[0]) & (f_hz <= band[1])
    if inside.sum() < 20:
        raise EstimationError("fewer than 20 bins inside the fit band")
    f_hz, psd = f_hz[inside], psd[inside]
    n_modes = len(guesses)
    w = TWO_PI * f_hz
    p0 = []
    for fc, fwhm, _ in guesses:
        p0.append(TWO_PI * fc)
    for fc, fwhm, _ in guesses:
        p0.append(math.log(TWO_PI * fwhm))
    for fc, fwhm, peak in guesses:
        wc, g = TWO_PI * fc, TWO_PI * fwhm
        p0.append(math.log(max(peak - floor0, floor0) * wc * wc * g * g))
    p0.append(math.log(max(floor0, 1e-300)))
    p0 = np.array(p0)
    span = w[-1] - w[0]
    g_lo, g_hi = math.log(1e-3 * (w[1] - w[0])), math.log(span)
    lo = np.concatenate([np.full(n_modes, w[0]), np.full(n_modes, g_lo), p0[2 * n_modes:] - 40.0])
    hi = np.concatenate([np.full(n_modes, w[-1]), np.full(n_modes, g_hi), p0[2 * n_modes:] + 40.0])
    p0[n_modes:2 * n_modes] = np.clip(p0[n_modes:2 * n_modes], g_lo + 1e-6, g_hi - 1e-6)

    log_psd = np.log(psd)

    def resid(p):
        m, _ = _thermal_model(p, w, n_modes)
        return np.log(m) - log_psd

    def jac(p):
        m, j = _thermal_model(p, w, n_modes)
        return j / m[:, None]

    rng = np.random.default_rng(seed)
    best = None
    for attempt in range(restarts):
        start = p0.copy()
        if attempt:
            start[:n_modes] += rng.normal(0.0, 0.2, n_modes) * np.exp(p0[n_modes:2 * n_modes])
            start[n_modes:] += rng.normal(0.0, 0.3, len(start) - n_modes)
            start = np.clip(start, lo + 1e-6, hi - 1e-6)
        try:
            sol = least_squares(resid, start, jac=jac, bounds=(lo, hi), method="trf",
                                x_scale="jac", xtol=1e-12, ftol=1e-12, max_nfev=2000)
        except (ValueError, FloatingPointError, OverflowError):
            continue
        if sol.success and (best is None or sol.cost < best.cost):
            best = sol
    if best is None:
        raise EstimationError("thermal fit did not converge after restarts")
    p = best.x
    dof = max(len(psd) - len(p), 1)
    s2 = 2.0 * best.cost / dof
    try:
        cov = np.linalg.inv(best.jac.T @ best.jac) * s2
    except np.linalg.LinAlgError:
        cov = np.full((len(p), len(p)), np.inf)
    omegas = p[:n_modes]
    gammas = np.exp(p[n_modes:2 * n_modes])
    amps = np.exp(p[2 * n_modes:3 * n_modes])
    mass = 4.0 * K_B * temperature / float(np.sum(amps / gammas))
    proj = amps * mass / (4.0 * K_B * temperature * gammas)
    overlap = bool(n_modes == 2 and abs(omegas[1] - omegas[0]) < 2.0 * (gammas[0] + gammas[1]))
    names = tuple([f"omega{i + 1}" for i in range(n_modes)] + [f"log_gamma{i + 1}" for i in range(n_modes)]
                  + [f"log_amp{i + 1}" for i in range(n_modes)] + ["log_floor"])
    theta1 = prior.theta1 if prior is not None else 0.0
    if n_modes == 2:
        modes = ModePair(omegas[0], omegas[1], theta1, gammas[0], gammas[1], mass, temperature)
        identifiable = (True, True)
        projections = proj
    else:
        # a single visible peak: assign it by proximity to the prior
        which = 0
        if prior is not None and abs(omegas[0] - prior.omega2) < abs(omegas[0] - prior.omega1):
            which = 1
        om = [math.nan, math.nan]
        gm = [math.nan, math.nan]
        om[which], gm[which] = omegas[0], gammas[0]
        if prior is not None:
            om[1 - which] = prior.omega(2 - which)
            gm[1 - which] = prior.gamma(2 - which)
            mass = prior.effective_mass
        modes = ModePair(om[0], om[1], theta1, gm[0], gm[1], mass, temperature)
        identifiable = (which == 0, which == 1)
        projections = np.zeros(2)
        projections[which] = amps[0] * mass / (4.0 * K_B * temperature * gammas[0])
    return ThermalFit(modes, projections, math.exp(p[-1]), cov, names,
                      float(np.sqrt(np.mean(best.fun ** 2))), int(best.nfev), identifiable, overlap)


# ---------------------------------------------------------------- response fit

@dataclass
class ResponseDataset:
    frequencies: np.ndarray
    response: np.ndarray
    drive: str = "swept-tone"
    modulation: tuple = (0.0, 0.0)
    e_beta: float = 0.0

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        self.response = np.asarray(self.response, dtype=complex)
        if self.frequencies.shape != self.response.shape:
            raise ValueError("frequencies and responses must have the same length")
        if np.any(np.diff(self.frequencies) <= 0):
            raise ValueError("frequency axis must be strictly increasing")
        p0, dp = self.modulation
        if p0 > 0 and not 0.0 <= dp / p0 <= 1.0:
            raise ValueError("modulation depth dP/P0 must lie in [0, 1]")

    @property
    def phase_deg(self):
        return np.degrees(np.unwrap(np.angle(self.response)))


@dataclass
class ResponseFit:
    force: ForcePhasor
    covariance: np.ndarray
    residual_rms: float
    rank_deficient: bool
    singular_values: np.ndarray

    @property
    def magnitude(self) -> float:
        return self.force.magnitude

    @property
    def angle(self) -> float:
        return self.force.angle

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.abs(np.diag(self.covariance)))


def _response_design(modes, e_beta, omega):
    """Real design matrix for unknowns (Fp_x, Fp_z, Fq_x, Fq_z)."""
    eb = unit(e_beta) if np.ndim(e_beta) == 0 else np.asarray(e_beta)
    cols = np.zeros((len(omega), 4), dtype=complex)
    for i in (1, 2):
        e_i = modes.e(i)
        c = (eb @ e_i) * susceptibility(modes, i, omega)
        cols[:, 0] += c * e_i[0]
        cols[:, 1] += c * e_i[1]
        cols[:, 2] += -1j * c * e_i[0]
        cols[:, 3] += -1j * c * e_i[1]
    return np.vstack([cols.real, cols.imag])


def fit_response(ds: ResponseDataset, modes: ModePair, e_beta=None, cond_limit: float = 1e6) -> ResponseFit:
    """Linear least squares for the in-phase and quadrature force vectors."""
    eb = ds.e_beta if e_beta is None else e_beta
    if isinstance(eb, MeasurementVector):
        eb = eb.angle_beta
    omega = TWO_PI * ds.frequencies
    a = _response_design(modes, eb, omega)
    b = np.concatenate([ds.response.real, ds.response.imag])
    scale = np.linalg.norm(a, axis=0)
    scale[scale == 0] = 1.0
    an = a / scale
    x, _, rank, sv = np.linalg.lstsq(an, b, rcond=None)
    deficient = bool(rank < 4 or sv[0] / sv[-1] > cond_limit)
    x = x / scale
    r = b - a @ x
    dof = max(len(b) - 4, 1)
    s2 = float(r @ r) / dof
    try:
        cov = np.linalg.pinv(a.T @ a) * s2
    except np.linalg.LinAlgError:
        cov = np.full((4, 4), np.inf)
    rms = float(np.sqrt(np.mean(r ** 2)) / max(np.sqrt(np.mean(b ** 2)), 1e-300))
    return ResponseFit(ForcePhasor(x[:2], x[2:]), cov, rms, deficient, sv)


def simulate_response_sweep(modes: ModePair, force: ForcePhasor, freqs_hz, e_beta=0.0, dwell: float = 0.2,
                            seed=None, thermal: bool = True, readout_noise_psd: float = 0.0,
                            modulation=(0.0, 0.0)) -> ResponseDataset:
    """Network-analyser measurement in the time domain.

    At each frequency the oscillator starts in the driven steady state plus
    a thermal draw, is integrated for ``dwell`` seconds under the
    modulated force ``Re(dF e^{i W t})`` and the readout is demodulated over
    an integer number of periods.
    """
    dt = max_time_step(modes)
    rng = np.random.default_rng(seed)
    out = []
    df = force.complex_vector
    for f in np.asarray(freqs_hz, dtype=float):
        w = TWO_PI * f
        sim = TrajectorySimulator(modes, dt, seed=rng.integers(2 ** 63), e_beta=e_beta,
                                  readout_noise_psd=readout_noise_psd, thermal=thermal, thermalize=thermal)
        for k in (0, 1):
            amp = susceptibility(modes, k + 1, w) * (modes.e(k + 1) @ df)
            sim.states[k] = sim.states[k] + np.array([amp.real, (1j * w * amp).real])
        n = int(round(round(dwell * f) / f / dt))
        tr = sim.advance(n, lambda t: np.outer(np.cos(w * t), df.real) + np.outer(np.sin(w * t), -df.imag))
        out.append(2.0 * np.mean(tr.readout * np.exp(-1j * w * tr.t)))
    return ResponseDataset(np.asarray(freqs_hz, dtype=float), np.array(out), "swept-tone", modulation,
                           float(e_beta) if np.ndim(e_beta) == 0 else math.atan2(*e_beta))


# ---------------------------------------------------------------- triplets

@dataclass(frozen=True)
class TripletConfig:
    spacing: float = 50.0
    block_length: float = 0.1
    tracker_gain: float = 0.5
    max_step: float = 5.0
    window: float = 500.0

    def __post_init__(self):
        if self.spacing < 2.0 / self.block_length:
            raise ValueError("tone spacing is not resolvable within one block")


@dataclass
class TripletEstimate:
    amplitude: complex        # numerator of the single-mode response (m rad^2/s^2)
    omega: float
    gamma: float
    covariance: np.ndarray
    reliable: bool
    residual_rms: float

    @property
    def quality(self) -> float:
        return self.omega / self.gamma

    def modal_force(self, modes: ModePair, projection: float, gain: float = 1.0) -> complex:
        """Force on the mode, ``e_i . dF`` (complex, N)."""
        return self.amplitude * modes.effective_mass / (projection * gain)


def _single_mode(params, w):
    ar, ai, om, g = params
    den = om * om - w * w + 1j * w * g
    with np.errstate(divide="ignore", invalid="ignore"):
        return (ar + 1j * ai) / den, den


def _triplet_residuals(q, w, z, scale):
    m, _ = _single_mode(q, w)
    r = (m - z) / scale
    return np.concatenate([r.real, r.imag])


def _triplet_jacobian(q, w, scale):
    m, den = _single_mode(q, w)
    cols = [1.0 / den, 1j / den, -m / den * 2.0 * q[2], -m / den * 1j * w]
    j = np.array(cols).T / scale
    return np.vstack([j.real, j.imag])


def triplet_estimate(tones_hz, amplitudes, background=None, refine: bool = True) -> TripletEstimate:
    """Local single-mode fit to three demodulated tone amplitudes.

    ``amplitudes`` are complex responses per unit drive phasor. An exact
    linearised solve (``W^2 - w_k^2 + i w_k G = a / Z_k``) seeds a nonlinear
    least-squares polish on the complex residuals.
    """
    w = TWO_PI * np.asarray(tones_hz, dtype=float)
    z = np.asarray(amplitudes, dtype=complex)
    if background is not None:
        z = z - np.asarray(background, dtype=complex)
    if len(w) != 3 or np.any(z == 0):
        raise EstimationError("triplet needs three non-zero tone amplitudes")
    inv = 1.0 / z
    # unknowns u = W^2, G, ar, ai
    a = np.zeros((6, 4))
    b = np.zeros(6)
    a[:3, 0] = 1.0
    a[:3, 2] = -inv.real
    a[:3, 3] = inv.imag
    b[:3] = w * w
    a[3:, 1] = w
    a[3:, 2] = -inv.imag
    a[3:, 3] = -inv.real
    scale = np.linalg.norm(a, axis=0)
    sol = np.linalg.lstsq(a / scale, b, rcond=None)[0] / scale
    u, g, ar, ai = sol
    om = math.sqrt(u) if u > 0 else float(np.mean(w))
    g = abs(g) if g != 0 else 1e-3 * om
    p = np.array([ar, ai, om, g])
    zs = float(np.max(np.abs(z)))

    def resid(q):
        return _triplet_residuals(q, w, z, zs)

    def jac(q):
        return _triplet_jacobian(q, w, zs)

    if refine:
        res = least_squares(resid, p, jac=jac, method="lm", x_scale="jac", xtol=1e-15, ftol=1e-15, gtol=1e-15)
        p = res.x
        jm = res.jac
        r = res.fun
    else:
        jm = jac(p)
        r = resid(p)
    dof = 2
    s2 = float(r @ r) / dof
    try:
        cov = np.linalg.inv(jm.T @ jm) * s2 * zs * zs
    except np.linalg.LinAlgError:
        cov = np.full((4, 4), np.inf)
    om, g = float(p[2]), abs(float(p[3]))
    reliable = bool(np.min(np.abs(w - om)) <= 10.0 * g and g > 0)
    return TripletEstimate(complex(p[0], p[1]), om, g, cov, reliable,
                           float(np.sqrt(np.mean(r ** 2))))


def mode_tail(est: TripletEstimate, tones_hz):
    """Response of an estimated mode at other tones, used as background."""
    w = TWO_PI * np.asarray(tones_hz, dtype=float)
    return _single_mode([est.amplitude.real, est.amplitude.imag, est.omega, est.gamma], w)[0]


def estimate_mode_pair(tones_hz, amplitudes, iterations: int = 2):
    """Triplet estimates for both modes, each fit with the other's tail
    (from the previous pass) subtracted as background."""
    tones_hz = np.asarray(tones_hz)
    z = np.asarray(amplitudes)
    ests = [triplet_estimate(tones_hz[k], z[k]) for k in (0, 1)]
    for _ in range(iterations):
        ests = [triplet_estimate(tones_hz[k], z[k], background=mode_tail(ests[1 - k], tones_hz[k]))
                for k in (0, 1)]
    return ests


def triplet_force_only(tones_hz, amplitudes, omega: float, gamma: float, background=None) -> complex:
    """Amplitude of a mode with known frequency and damping (linear fit)."""
    w = TWO_PI * np.asarray(tones_hz, dtype=float)
    z = np.asarray(amplitudes, dtype=complex)
    if background is not None:
        z = z - np.asarray(background, dtype=complex)
    c = 1.0 / (omega * omega - w * w + 1j * w * gamma)
    return complex(np.sum(np.conj(c) * z) / np.sum(np.abs(c) ** 2))


def triplet_tones(center_hz: float, spacing: float = 50.0):
    return np.array([center_hz - spacing, center_hz, center_hz + spacing])


def synthesize_triplet_block(modes: ModePair, e_beta, force: ForcePhasor, centers_hz, cfg: TripletConfig,
                             rng=None, gain: float = 1.0, noise_floor: float = 0.0, thermal: bool = True):
    """Demodulated readout (m) of one block with a triplet around each mode.

    Every tone drives the force phasor ``force``. Thermal motion enters
    each tone's estimate as complex Gaussian noise with
    ``E|n|^2 = 2 S(W_k) / T``, the variance of a boxcar demodulation of a
    stationary process over one block. Returns ``(tones_hz (2, 3), z (2, 3))``.
    """
    rng = np.random.default_rng(rng)
    eb = e_beta.direction if isinstance(e_beta, MeasurementVector) else (
        unit(e_beta) if np.ndim(e_beta) == 0 else np.asarray(e_beta))
    tones = np.array([triplet_tones(c, cfg.spacing) for c in centers_hz])
    w = TWO_PI * tones
    z = gain * projected_response(modes, eb, force, w)
    s = np.zeros_like(w)
    if thermal and modes.temperature > 0:
        s = s + thermal_psd(modes, eb, w)
    s = s + noise_floor
    sigma = np.sqrt(s / cfg.block_length)   # per real and imaginary part: E|n|^2 = 2 S / T
    noise = sigma * (rng.standard_normal(w.shape) + 1j * rng.standard_normal(w.shape))
    return tones, z + gain * noise


def simulate_triplet_block(modes: ModePair, e_beta, force: ForcePhasor, centers_hz, cfg: TripletConfig,
                           seed=None, gain: float = 1.0):
    """Time-domain counterpart of :func:`synthesize_triplet_block`: all six
    tones drive the simulator and the readout is boxcar-demodulated."""
    dt = max_time_step(modes)
    sim = TrajectorySimulator(modes, dt, seed=seed, e_beta=e_beta, gain=gain, thermalize=True)
    tones = np.array([triplet_tones(c, cfg.spacing) for c in centers_hz])
    w = TWO_PI * tones.ravel()
    df = force.complex_vector
    for k in (0, 1):
        amp = np.sum(susceptibility(modes, k + 1, w)) * (modes.e(k + 1) @ df)
        sim.states[k] = sim.states[k] + np.array([amp.real, np.sum(
            1j * w * susceptibility(modes, k + 1, w) * (modes.e(k + 1) @ df)).real])

    def drive(t):
        ph = np.exp(1j * np.outer(t, w)).sum(axis=1)
        return (ph[:, None] * df[None, :]).real

    n = int(round(cfg.block_length / dt))
    tr = sim.advance(n, drive)
    z = np.array([2.0 * np.mean(tr.readout * np.exp(-1j * wk * tr.t)) for wk in w]).reshape(tones.shape)
    return tones, z


# ---------------------------------------------------------------- tracker

def tracker_error(z_minus: complex, z_plus: complex) -> float:
    """Side-tone magnitude imbalance, ``~ (f_center - f_mode) / spacing``."""
    a, b = abs(z_minus), abs(z_plus)
    return 0.0 if a + b == 0 else (a - b) / (a + b)


@dataclass
class PeakTracker:
    center: float
    nominal: float
    gain: float = 0.5
    spacing: float = 50.0
    max_step: float = 5.0
    window: float = 500.0
    needs_reacquire: bool = False
    history: list = field(default_factory=list)

    @classmethod
    def from_config(cls, center_hz: float, cfg: TripletConfig):
        return cls(center_hz, center_hz, cfg.tracker_gain, cfg.spacing, cfg.max_step, cfg.window)

    def update(self, z_minus: complex, z_plus: complex) -> float:
        err = tracker_error(z_minus, z_plus)
        step = float(np.clip(-self.gain * self.spacing * err, -self.max_step, self.max_step))
        self.center += step
        self.history.append(self.center)
        if abs(self.center - self.nominal) > self.window:
            self.needs_reacquire = True
        return self.center

    def reacquire(self, sweep_hz, magnitudes) -> float:
        """Recentre on the maximum of a mini-sweep."""
        self.center = float(np.asarray(sweep_hz)[int(np.argmax(magnitudes))])
        self.nominal = self.center
        self.needs_reacquire = False
        return self.center


def peak_tracker_update(tracker: PeakTracker, z_minus: complex, z_plus: complex) -> float:
    return tracker.update(z_minus, z_plus)


# ---------------------------------------------------------------- e_beta calibration

def boxcar_demodulate(sig, sample_rate: float, frequency: float, t0: float = 0.0) -> complex:
    t = t0 + np.arange(len(sig)) / sample_rate
    return complex(2.0 * np.mean(np.asarray(sig) * np.exp(-1j * TWO_PI * frequency * t)))


@dataclass
class CalibrationRecord:
    signal: np.ndarray
    sample_rate: float
    amplitude_x: float
    amplitude_z: float
    f_x: float = 80.0
    f_z: float = 85.0


def simulate_calibration_record(probe_fn, position, amplitude_x: float, amplitude_z: float,
                                duration: float = 1.0, sample_rate: float = 10e3,
                                noise_rms: float = 0.0, seed=None, f_x: float = 80.0, f_z: float = 85.0):
    """Probe reflection while the wire is dithered along x at ``f_x`` and
    along z at ``f_z``. ``probe_fn(x, z)`` is vectorised."""
    rng = np.random.default_rng(seed)
    t = np.arange(int(round(duration * sample_rate))) / sample_rate
    x = position[0] + amplitude_x * np.cos(TWO_PI * f_x * t)
    z = position[1] + amplitude_z * np.cos(TWO_PI * f_z * t)
    sig = probe_fn(x, z) + rng.normal(0.0, noise_rms, len(t)) if noise_rms > 0 else probe_fn(x, z)
    return CalibrationRecord(np.asarray(sig, dtype=float), sample_rate, amplitude_x, amplitude_z, f_x, f_z)


def calibrate_measurement_vector(rec: CalibrationRecord, noise_rms: float = 0.0,
                                 snr_threshold: float = 3.0) -> MeasurementVector:
    """Gradient of the probe signal from the two-tone lock-in amplitudes."""
    n = len(rec.signal)
    sigma = 2.0 * noise_rms / math.sqrt(n) if noise_rms > 0 else 0.0
    comps = []
    resolved = []
    for amp, f in ((rec.amplitude_x, rec.f_x), (rec.amplitude_z, rec.f_z)):
        d = boxcar_demodulate(rec.signal, rec.sample_rate, f)
        if amp == 0:
            comps.append(0.0)
            resolved.append(False)
            continue
        comps.append(d.real / amp)
        resolved.append(abs(d) > snr_threshold * sigma)
    if not any(resolved):
        return MeasurementVector(0.0, 1.0, defined=False)
    g = np.array([c if r else 0.0 for c, r in zip(comps, resolved)])
    return MeasurementVector.from_gradient(g)
