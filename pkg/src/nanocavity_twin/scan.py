"""Raster scans of the wire through the cavity mode.

The fast axis is always ``z`` (the optical axis); the slow axis is ``x``
(XZ plane), ``y`` (YZ plane) or absent (1D axial line). Lines are taken in
serpentine order: even lines run towards +z, odd lines towards -z. Each
line starts and ends with a reading taken with the wire retracted, which
sees only the cavity drift; the lock correction is detrended against the
straight line between those two readings.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cavity import (CavityGeometry, NanowireScatterer, SolverError, _Fields, analytic_linewidth,
                     cavity_mode, effective_polarizability, find_resonance)
from .constants import HBAR
from .mapio import MASK_LOCK_LOST, MASK_OK, MASK_SOLVER, ChannelMap
from .servo import DriftModel, LockConfig, LockState, run_lock

PLANES = ("XZ", "YZ", "Z")


class PixelError(RuntimeError):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class ScanPlan:
    plane: str = "XZ"
    fast_extent: float = 1e-6
    slow_extent: float = 1e-6
    center: tuple = (0.0, 0.0, 0.0)
    resolution: tuple = (100, 100)     # (n_fast, n_slow)
    dwell: float = 10e-3
    channels: tuple = ()
    seed: int = 0
    serpentine: bool = True

    def __post_init__(self):
        if self.plane not in PLANES:
            raise ValueError(f"plane must be one of {PLANES}")
        n_fast, n_slow = self.resolution
        if n_fast < 2 or n_slow < 1 or (self.plane != "Z" and n_slow < 2):
            raise ValueError("resolution too small")
        if self.plane == "Z" and n_slow != 1:
            raise ValueError("an axial line scan has a single slow index")

    @property
    def shape(self) -> tuple:
        return (self.resolution[1], self.resolution[0])

    @property
    def slow_axis(self) -> str:
        return {"XZ": "x", "YZ": "y", "Z": "-"}[self.plane]

    @property
    def pitch(self) -> tuple:
        n_fast, n_slow = self.resolution
        slow = self.slow_extent / (n_slow - 1) if n_slow > 1 else 0.0
        return (slow, self.fast_extent / (n_fast - 1))

    @property
    def origin(self) -> tuple:
        cx, cy, cz = self.center
        slow_c = {"XZ": cx, "YZ": cy, "Z": 0.0}[self.plane]
        s0 = slow_c - self.slow_extent / 2 if self.resolution[1] > 1 else slow_c
        return (s0, cz - self.fast_extent / 2)

    def position(self, i_slow: int, i_fast: int) -> tuple:
        s = self.origin[0] + self.pitch[0] * i_slow
        z = self.origin[1] + self.pitch[1] * i_fast
        x, y, _ = self.center
        if self.plane == "XZ":
            x = s
        elif self.plane == "YZ":
            y = s
        return (x, y, z)

    def line_order(self, i_slow: int) -> np.ndarray:
        idx = np.arange(self.resolution[0])
        return idx[::-1] if (self.serpentine and i_slow % 2) else idx

    def pixel_index(self, i_slow: int, i_fast: int) -> int:
        return i_slow * self.resolution[0] + i_fast

    def pixel_seed(self, i_slow: int, i_fast: int) -> int:
        return (int(self.seed) ^ self.pixel_index(i_slow, i_fast)) & 0xFFFFFFFFFFFF

    def line_time(self) -> float:
        return (self.resolution[0] + 2) * self.dwell

    def pixel_time(self, i_slow: int, i_fast: int) -> float:
        """Logical acquisition time of a pixel (line reference slots included)."""
        k = int(np.where(self.line_order(i_slow) == i_fast)[0][0])
        return i_slow * self.line_time() + (k + 1) * self.dwell

    def empty_map(self) -> ChannelMap:
        meta = {"plane": self.plane, "scan_order": "serpentine" if self.serpentine else "raster",
                "fast_axis": "z", "dwell_s": self.dwell, "seed": int(self.seed),
                "fast_pitch_m": self.pitch[1], "slow_pitch_m": self.pitch[0]}
        return ChannelMap((self.slow_axis, "z"), self.origin, self.pitch, self.shape, metadata=meta)


def raster_scan(plan: ScanPlan, pipeline, n_jobs: int = 1) -> ChannelMap:
    """Run ``pipeline`` over every pixel in acquisition order.

    ``pipeline.line(plan, i_slow)`` returns ``(values, mask)`` for one line,
    with ``values`` a dict of 1D arrays indexed by fast pixel. Lines are
    independent, so the result does not depend on ``n_jobs``.
    """
    out = plan.empty_map()
    n_slow = plan.shape[0]
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(n_jobs) as ex:
            lines = list(ex.map(pipeline.line, [plan] * n_slow, range(n_slow)))
    else:
        lines = [pipeline.line(plan, i) for i in range(n_slow)]
    names = list(lines[0][0])
    for name in names:
        out.add(name, np.vstack([ln[0][name] for ln in lines]), pipeline.units.get(name, ""))
    out.mask = np.vstack([ln[1] for ln in lines]).astype(np.uint8)
    out.metadata.update(getattr(pipeline, "metadata", {}))
    return out


# ------------------------------------------------------------ optical pipeline

@dataclass
class OpticalPipeline:
    """Locked-cavity channels of optomechanical scan maps.

    Per pixel: the true resonance shift and power channels from the
    transfer-matrix solve, then a short lock settle (ramp from the previous
    pixel's length shift, hold, average) giving the ``cavity_shift`` channel
    after drift subtraction.
    """
    geom: CavityGeometry
    wire: NanowireScatterer
    lock: LockConfig = field(default_factory=LockConfig)
    drift: DriftModel = field(default_factory=DriftModel)
    settle_ramp: float = 0.2e-3
    settle_hold: float = 1.0e-3
    average_window: float = 0.5e-3
    simulate_lock: bool = True
    units: dict = field(default_factory=lambda: {
        "transmission": "1", "reflection": "1", "scatter": "1", "linewidth": "rad/s",
        "resonance_shift": "rad/s", "length_shift": "m", "cavity_shift": "m", "photon_number": "1/W",
        "residual_rms": "m"})

    def __post_init__(self):
        self.mode = cavity_mode(self.geom)
        self.half_width = self.geom.wavelength / (4.0 * self.geom.finesse)

    @property
    def metadata(self) -> dict:
        return {"pipeline": "optical", "kappa_empty": analytic_linewidth(self.geom, 0.0, 0j, 0.0),
                "omega0": self.geom.omega0, "length": self.geom.length,
                "drift_subtraction": "per-line linear interpolation between retracted-wire readings"}

    def solve(self, pos):
        w = self.wire.at(*pos)
        zeta = effective_polarizability(w, self.mode)
        shift = find_resonance(self.geom, pos[2], zeta)
        f = _Fields(self.geom, pos[2], zeta, self.geom.omega0 + shift, 1.0)
        return {
            "transmission": float(abs(f.trans) ** 2),
            "reflection": float(abs(f.refl) ** 2),
            "scatter": float(f.scatter),
            "linewidth": analytic_linewidth(self.geom, pos[2], zeta, shift),
            "resonance_shift": shift,
            "length_shift": -self.geom.length * shift / self.geom.omega0,
            "photon_number": float(f.stored_energy) / (HBAR * (self.geom.omega0 + shift)),
        }

    def _settle(self, start_target, target, t0, seed):
        # keep the ramp slow enough for the fast loop to follow (lag < hw / 4)
        max_rate = 0.25 * self.half_width * self.lock.pi_fast.ki
        ramp = max(self.settle_ramp, abs(target - start_target) / max_rate)
        total = ramp + self.settle_hold

        def disturbance(t):
            frac = np.clip((t - t0) / ramp, 0.0, 1.0)
            return start_target + (target - start_target) * frac

        state = LockState(fast=0.0, slow=start_target + float(self.drift(t0)))
        res = run_lock(disturbance, self.drift, self.lock, total, self.half_width, seed=seed,
                       state=state, t0=t0)
        n_avg = max(1, int(round(self.average_window * self.lock.control_rate)))
        return float(np.mean(res.correction[-n_avg:])), res

    def line(self, plan: ScanPlan, i_slow: int):
        n = plan.resolution[0]
        vals = {k: np.full(n, np.nan) for k in
                ("transmission", "reflection", "scatter", "linewidth", "resonance_shift", "length_shift",
                 "photon_number", "cavity_shift", "residual_rms")}
        mask = np.zeros(n, dtype=np.uint8)
        order = plan.line_order(i_slow)
        t_line = i_slow * plan.line_time()
        ref_seed = (int(plan.seed) ^ (0x5EED << 20) ^ i_slow) & 0xFFFFFFFFFFFF
        ref_start = ref_end = None
        if self.simulate_lock:
            ref_start, _ = self._settle(0.0, 0.0, t_line, ref_seed)
        prev = 0.0
        corrections = np.full(n, np.nan)
        times = np.full(n, np.nan)
        for k, i_fast in enumerate(order):
            pos = plan.position(i_slow, i_fast)
            try:
                sol = self.solve(pos)
            except (SolverError, ValueError):
                mask[i_fast] = MASK_SOLVER
                continue
            for key, v in sol.items():
                vals[key][i_fast] = v
            if self.simulate_lock:
                t_pix = t_line + (k + 1) * plan.dwell
                corr, res = self._settle(prev, sol["length_shift"], t_pix, plan.pixel_seed(i_slow, i_fast))
                vals["residual_rms"][i_fast] = res.residual_rms
                if not res.locked:
                    mask[i_fast] = MASK_LOCK_LOST
                corrections[i_fast] = corr
                times[i_fast] = t_pix
            prev = sol["length_shift"]
        if self.simulate_lock:
            t_end = t_line + (n + 1) * plan.dwell
            ref_end, _ = self._settle(prev, 0.0, t_end, ref_seed ^ 1)
            drift_est = ref_start + (ref_end - ref_start) * (times - t_line) / (t_end - t_line)
            vals["cavity_shift"] = corrections - drift_est
        else:
            vals["cavity_shift"] = vals["length_shift"].copy()
        return vals, mask


# ------------------------------------------------------------ derived channels

def gradient_channel(m: ChannelMap, channel: str, axis: str = "z", omega0: float | None = None,
                     length: float | None = None, name: str | None = None, wavelength: float | None = None):
    """Spatial derivative of a channel (central differences, one-sided edges).

    A ``cavity_shift`` (length) channel is converted to a resonance shift
    with ``-omega0 / L`` first, so the result is ``G`` in rad/s/m. Pixels
    next to a masked pixel are masked in the output.
    """
    if channel not in m.channels:
        raise KeyError(f"channel {channel!r} not in map")
    ax = m.axes.index(axis)
    step = m.pitch[ax]
    if step <= 0 or m.shape[ax] < 2:
        raise ValueError(f"axis {axis!r} has no extent")
    if wavelength is not None and step > wavelength / 30:
        raise ValueError("pitch is too coarse for a gradient map (needs <= wavelength/30)")
    data = np.asarray(m.channels[channel], dtype=float)
    if channel == "cavity_shift" or m.units.get(channel) == "m":
        omega0 = omega0 if omega0 is not None else m.metadata["omega0"]
        length = length if length is not None else m.metadata["length"]
        data = -omega0 / length * data
    bad = m.mask != MASK_OK
    data = np.where(bad, np.nan, data)
    grad = np.gradient(data, step, axis=ax)
    grad[bad] = np.nan
    out_name = name or f"G_{axis}"
    m.add(out_name, grad, "rad/s/m")
    return grad


def pixel_average(m: ChannelMap, channel: str, kernel_size: int, name: str | None = None):
    """Mask-aware moving average along the fast axis."""
    if not 1 <= kernel_size <= 16:
        raise ValueError("kernel size must be within 1..16")
    data = np.asarray(m.channels[channel], dtype=float)
    good = (m.mask == MASK_OK) & np.isfinite(data)
    if kernel_size == 1:
        out = np.where(good, data, np.nan)
    else:
        kern = np.ones(kernel_size)
        num = np.apply_along_axis(lambda r: np.convolve(r, kern, mode="same"), 1, np.where(good, data, 0.0))
        den = np.apply_along_axis(lambda r: np.convolve(r, kern, mode="same"), 1, good.astype(float))
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(den > 0, num / den, np.nan)
    out_name = name or f"{channel}_avg{kernel_size}"
    m.add(out_name, out, m.units.get(channel, ""))
    m.metadata[f"{out_name}_resolution_m"] = kernel_size * m.pitch[1]
    return out
