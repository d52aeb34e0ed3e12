"""Triplet force mapping of in-plane scans.

Two passes: the true force field (and its gradient tensor) is computed on
the scan grid from the locked-cavity optics, then every pixel is
"measured": the probe measurement vector is calibrated with the two-tone
scheme, both modes are driven by a triplet of intensity-modulated tones
for one block, and the demodulated amplitudes are inverted into frequency,
damping and force. Peak trackers carry their state along each line.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cavity import CavityGeometry, NanowireScatterer, SolverError, cavity_mode
from .constants import TWO_PI
from .estimation import (EstimationError, PeakTracker, TripletConfig, calibrate_measurement_vector,
                         estimate_mode_pair, mode_tail, simulate_calibration_record, synthesize_triplet_block,
                         triplet_force_only)
from .mapio import MASK_ESTIMATION, MASK_NO_READOUT, MASK_OK, MASK_SOLVER, ChannelMap
from .mechanics import ForcePhasor, ModePair, projected_response
from .optoforce import force_vector
from .scan import ScanPlan
from .servo import ProbeReadoutModel, probe_power, probe_reflection


def compute_force_field(plan: ScanPlan, geom: CavityGeometry, wire: NanowireScatterer,
                        step: float = 1e-10) -> ChannelMap:
    """F_x, F_z per watt of input power at every pixel, plus the in-plane
    gradient tensor from grid differences."""
    if plan.plane == "YZ":
        raise ValueError("force maps are taken in the XZ plane or along z")
    mode = cavity_mode(geom)
    out = plan.empty_map()
    fx = np.full(plan.shape, np.nan)
    fz = np.full(plan.shape, np.nan)
    mask = np.zeros(plan.shape, dtype=np.uint8)
    for i in range(plan.shape[0]):
        for j in range(plan.shape[1]):
            try:
                s = force_vector(geom, wire.at(*plan.position(i, j)), 1.0, step=step, mode=mode)
                fx[i, j], fz[i, j] = s.force[0], s.force[2]
            except (SolverError, ValueError):
                mask[i, j] = MASK_SOLVER
    out.mask = mask
    out.add("F_x_per_W", fx, "N/W")
    out.add("F_z_per_W", fz, "N/W")
    dx, dz = out.pitch
    for name, arr in (("F_x", fx), ("F_z", fz)):
        d_dx, d_dz = np.gradient(arr, dx, dz) if plan.shape[0] > 1 else (np.zeros_like(arr), np.gradient(arr, dz, axis=1))
        out.add(f"d{name}_dx_per_W", d_dx, "N/m/W")
        out.add(f"d{name}_dz_per_W", d_dz, "N/m/W")
    return out


def shifted_modes(modes: ModePair, grad_tensor) -> ModePair:
    """Mode frequencies softened/stiffened by a force gradient tensor
    ``[[dFx/dx, dFx/dz], [dFz/dx, dFz/dz]]``."""
    g = np.asarray(grad_tensor)
    om = []
    for i in (1, 2):
        e = modes.e(i)
        dk = -(e @ g @ e)
        om.append(modes.omega(i) * (1.0 + dk / (2.0 * modes.stiffness(i))))
    return modes.with_omegas(*om)


@dataclass
class ForceMapPipeline:
    field_map: ChannelMap
    modes: ModePair
    probe: ProbeReadoutModel = field(default_factory=ProbeReadoutModel)
    triplet: TripletConfig = field(default_factory=TripletConfig)
    static_power: float = 5e-6
    tone_power: float = 0.8e-6
    readout_noise: float = 1e-28          # m^2/Hz at the largest probe gradient
    calibration_dither: float = 5e-9
    calibration_duration: float = 0.2
    calibration_snr: float = 100.0
    probe_offset: tuple = (0.0, 0.0)
    sweep_step: float = 2.0
    min_snr: float = 5.0
    units: dict = field(default_factory=lambda: {
        "F_x": "N", "F_z": "N", "Fq_x": "N", "Fq_z": "N", "F_x_true": "N", "F_z_true": "N",
        "f1": "Hz", "f2": "Hz", "f1_true": "Hz", "f2_true": "Hz", "Q1": "1", "Q2": "1",
        "center1": "Hz", "center2": "Hz", "beta": "rad", "probe_gain": "W/m", "fit_flags": "bits"})

    def __post_init__(self):
        if 6 * self.tone_power > self.static_power:
            raise ValueError("six tones of this depth would drive the pump power negative")
        self._gain_max = 2.0 * self.probe.k * self.probe.visibility * self.probe.mean_power

    @property
    def metadata(self) -> dict:
        return {"pipeline": "force-map", "static_power_W": self.static_power, "tone_power_W": self.tone_power,
                "block_length_s": self.triplet.block_length, "tone_spacing_Hz": self.triplet.spacing}

    def _mini_sweep(self, modes, i, eb, gain, force, rng, nominal):
        f = nominal + np.arange(-self.triplet.window, self.triplet.window + self.sweep_step, self.sweep_step)
        z = np.abs(projected_response(modes, eb, force, TWO_PI * f))
        z = z * (1.0 + 0.02 * rng.standard_normal(len(f)))
        return f, z

    def line(self, plan: ScanPlan, i_slow: int):
        fm = self.field_map
        n = plan.resolution[0]
        vals = {k: np.full(n, np.nan) for k in self.units}
        mask = fm.mask[i_slow].copy()
        nominal = [self.modes.omega1 / TWO_PI, self.modes.omega2 / TWO_PI]
        trackers = None
        for i_fast in plan.line_order(i_slow):
            if mask[i_fast] != MASK_OK:
                continue
            rng = np.random.default_rng(plan.pixel_seed(i_slow, i_fast))
            x, _, z = plan.position(i_slow, i_fast)
            p0 = self.static_power
            grad = p0 * np.array([[fm.channels["dF_x_dx_per_W"][i_slow, i_fast], fm.channels["dF_x_dz_per_W"][i_slow, i_fast]],
                                  [fm.channels["dF_z_dx_per_W"][i_slow, i_fast], fm.channels["dF_z_dz_per_W"][i_slow, i_fast]]])
            if not np.all(np.isfinite(grad)):
                mask[i_fast] = MASK_SOLVER
                continue
            local = shifted_modes(self.modes, grad)
            f_true = np.array([fm.channels["F_x_per_W"][i_slow, i_fast], fm.channels["F_z_per_W"][i_slow, i_fast]])
            force = ForcePhasor(f_true * self.tone_power)
            vals["F_x_true"][i_fast], vals["F_z_true"][i_fast] = force.in_phase
            vals["f1_true"][i_fast] = local.omega1 / TWO_PI
            vals["f2_true"][i_fast] = local.omega2 / TWO_PI

            # measurement vector from the two-tone calibration
            px, pz = x - self.probe_offset[0], z - self.probe_offset[1]
            truth = probe_reflection((px, pz), self.probe)
            cal_noise = max(np.linalg.norm(truth.gradient), 1e-3 * self._gain_max) * self.calibration_dither \
                / self.calibration_snr
            rec = simulate_calibration_record(lambda a, b: probe_power(a, b, self.probe), (px, pz),
                                              self.calibration_dither, self.calibration_dither,
                                              self.calibration_duration, noise_rms=cal_noise * math.sqrt(2.0),
                                              seed=rng.integers(2 ** 63))
            eb = calibrate_measurement_vector(rec, noise_rms=cal_noise * math.sqrt(2.0))
            vals["beta"][i_fast] = eb.angle_beta
            vals["probe_gain"][i_fast] = eb.gain
            if not eb.defined:
                mask[i_fast] = MASK_NO_READOUT
                continue
            true_gain = float(np.linalg.norm(truth.gradient))
            floor = self.readout_noise * (self._gain_max / max(true_gain, 1e-300)) ** 2

            if trackers is None:
                trackers = []
                for k in (0, 1):
                    tr = PeakTracker.from_config(nominal[k], self.triplet)
                    f, mag = self._mini_sweep(local, k, truth.e_beta.direction, true_gain, force, rng, nominal[k])
                    sel = np.abs(f - nominal[k]) < 0.5 * abs(nominal[1] - nominal[0])
                    tr.reacquire(f[sel], mag[sel])
                    trackers.append(tr)
            centers = [tr.center for tr in trackers]
            tones, zz = synthesize_triplet_block(local, truth.e_beta.direction, force, centers, self.triplet,
                                                 rng=rng, gain=true_gain, noise_floor=floor)
            try:
                ests = estimate_mode_pair(tones, zz / eb.gain)
            except (EstimationError, np.linalg.LinAlgError, ValueError):
                mask[i_fast] = MASK_ESTIMATION
                continue
            modal = []
            flags = 0
            for k, est in enumerate(ests):
                proj = float(eb.direction @ self.modes.e(k + 1))
                q_ratio = est.quality / self.modes.quality(k + 1) if est.gamma > 0 else 0.0
                amp_err = math.sqrt(abs(est.covariance[0, 0]) + abs(est.covariance[1, 1]))
                good = (est.reliable and np.isfinite(est.omega)
                        and abs(est.amplitude) >= self.min_snr * amp_err
                        and abs(est.omega / TWO_PI - centers[k]) < 2.0 * self.triplet.spacing
                        and 0.2 < q_ratio < 5.0)
                if good:
                    amp = est.amplitude
                else:
                    # weak mode: keep the tracker frequency and prior damping
                    flags |= 1 << k
                    other = ests[1 - k]
                    bg = mode_tail(other, tones[k]) if other.reliable else None
                    amp = triplet_force_only(tones[k], zz[k] / eb.gain, TWO_PI * centers[k],
                                             self.modes.gamma(k + 1), bg)
                    est.omega, est.gamma = math.nan, math.nan
                modal.append(amp * self.modes.effective_mass / proj)
            vals["fit_flags"][i_fast] = flags
            vec = modal[0] * self.modes.e1 + modal[1] * self.modes.e2
            vals["F_x"][i_fast], vals["F_z"][i_fast] = vec.real
            vals["Fq_x"][i_fast], vals["Fq_z"][i_fast] = -vec.imag
            vals["f1"][i_fast] = ests[0].omega / TWO_PI
            vals["f2"][i_fast] = ests[1].omega / TWO_PI
            vals["Q1"][i_fast] = ests[0].omega / ests[0].gamma
            vals["Q2"][i_fast] = ests[1].omega / ests[1].gamma
            vals["center1"][i_fast], vals["center2"][i_fast] = centers
            for k, tr in enumerate(trackers):
                tr.update(zz[k][0], zz[k][2])
                if tr.needs_reacquire:
                    f, mag = self._mini_sweep(local, k, truth.e_beta.direction, true_gain, force, rng, nominal[k])
                    tr.reacquire(f, mag)
        return vals, mask


def force_map_errors(m: ChannelMap, threshold: float = 0.1):
    """Relative vector error of the estimated in-phase force on pixels whose
    true force exceeds ``threshold`` of the maximum. Returns (median, errors)."""
    ft = np.hypot(m.channels["F_x_true"], m.channels["F_z_true"])
    fe = np.hypot(m.channels["F_x"] - m.channels["F_x_true"], m.channels["F_z"] - m.channels["F_z_true"])
    sel = (m.mask == MASK_OK) & np.isfinite(fe) & (ft >= threshold * np.nanmax(ft))
    err = fe[sel] / ft[sel]
    return float(np.median(err)), err
