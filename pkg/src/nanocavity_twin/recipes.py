"""Reproducible experiment recipes.

Each recipe takes a validated config, writes its artifacts atomically into
an output directory and returns a small summary dict. ``run_recipe`` adds a
``manifest.json`` with the config hash, seed, package versions and artifact
checksums. Wall-clock data lives under the manifest's ``timing`` key only,
so two runs with the same config and seed give identical manifests apart
from that key.
"""
from __future__ import annotations

import hashlib
import json
import math
import platform
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pydantic
import scipy

from . import __version__
from .cavity import SolverError, analytic_linewidth, cavity_mode, effective_polarizability, find_resonance, _Fields
from .config import ConfigError, ExperimentConfig
from .constants import HBAR, TWO_PI
from .estimation import (EstimationError, ResponseDataset, fit_response, fit_thermal_spectrum,
                         record_thermal_spectrum, simulate_response_sweep)
from .forcemap import ForceMapPipeline, compute_force_field, force_map_errors
from .mapio import atomic_write, export_map_text, read_map, write_map
from .mechanics import ForcePhasor, thermal_psd
from .merit import merit_report, zero_point_motion
from .optoforce import axial_force_profile, extremum_asymmetry, gradient_frequency_shift
from .scan import OpticalPipeline, ScanPlan, gradient_channel, pixel_average, raster_scan
from .servo import measure_rejection, run_lock

RECIPES = ("merit-report", "sweep", "scan-map", "force-profile", "force-map", "thermal-noise", "response",
           "fit-noise", "fit-response", "lock-sim", "track-line", "map-export")


class RecipeError(RuntimeError):
    """A recipe could not run with the given inputs."""


class _Run:
    """Collects artifacts written by a recipe."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts = {}
        self.lines = []

    def _record(self, name: str, data: bytes):
        self.artifacts[name] = hashlib.sha256(data).hexdigest()

    def write_bytes(self, name: str, data: bytes):
        atomic_write(self.out / name, data)
        self._record(name, data)

    def write_text(self, name: str, text: str):
        self.write_bytes(name, text.encode())

    def write_json(self, name: str, obj):
        self.write_text(name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def write_table(self, name: str, columns: dict, header: str = ""):
        names = list(columns)
        data = np.column_stack([np.asarray(columns[k], dtype=float) for k in names])
        lines = [f"# {ln}" for ln in header.splitlines()] + ["# " + " ".join(names)]
        lines += [" ".join(f"{v:.17g}" for v in row) for row in data]
        self.write_text(name, "\n".join(lines) + "\n")

    def write_map(self, name: str, m):
        write_map(self.out / name, m)
        self._record(name, (self.out / name).read_bytes())

    def say(self, text: str):
        self.lines.append(text)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def read_table(path) -> tuple:
    """Columns of a table written by a recipe: ``(names, array)``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise RecipeError(f"cannot read {path}: {exc}") from exc
    names, rows = None, []
    for ln in text.splitlines():
        if ln.startswith("#"):
            names = ln[1:].split()
        elif ln.strip():
            try:
                rows.append([float(v) for v in ln.split()])
            except ValueError as exc:
                raise RecipeError(f"{path}: {exc}") from exc
    if not rows or names is None or len(names) != len(rows[0]):
        raise RecipeError(f"{path} is not a recipe table")
    return names, np.array(rows)


# ------------------------------------------------------------------ recipes

def merit_report_recipe(cfg: ExperimentConfig, run: _Run, **_):
    osc = cfg.oscillator()
    geom = cfg.cavity()
    mer = cfg.merit
    if mer.g0_hz is not None:
        big_g = TWO_PI * mer.g0_hz / zero_point_motion(osc)
    else:
        big_g = TWO_PI * mer.coupling_hz_per_m
    kappa = TWO_PI * mer.kappa_hz if mer.kappa_hz is not None else geom.kappa_empty
    rep = merit_report(big_g, osc, kappa)
    hz = {
        "delta_x_zpf_m": rep["delta_x_zpf"],
        "thermal_spread_m": rep["thermal_spread"],
        "coupling_hz_per_m": rep["big_g"] / TWO_PI,
        "g0_hz": rep["g0"] / TWO_PI,
        "g0_over_omega_m": rep["g0_over_omega_m"],
        "ultrastrong": rep["ultrastrong"],
        "single_photon_force_N": rep["single_photon_force"],
        "single_photon_displacement_m": rep["single_photon_displacement"],
        "displacement_over_zpf": rep["displacement_over_zpf"],
        "thermal_over_zpf": rep["thermal_over_zpf"],
        "single_photon_shift_hz": rep["single_photon_shift"] / TWO_PI,
        "thermal_broadening_hz": rep["thermal_broadening"] / TWO_PI,
        "kappa_hz": rep["kappa"] / TWO_PI,
        "parametric_cooperativity": rep["parametric_cooperativity"],
        "standard_cooperativity": rep["standard_cooperativity"],
    }
    run.write_json("merit.json", hz)
    run.say(f"g0/2pi = {hz['g0_hz'] / 1e6:.3g} MHz")
    run.say(f"g0/Omega_m = {hz['g0_over_omega_m']:.3g}")
    run.say(f"dx_zpf = {hz['delta_x_zpf_m'] * 1e12:.3g} pm, thermal spread = {hz['thermal_spread_m'] * 1e9:.3g} nm")
    run.say(f"C1 = {hz['parametric_cooperativity']:.3g}, C = {hz['standard_cooperativity']:.3g}")
    return hz


def _sweep_table(geom, wire, positions):
    mode = cavity_mode(geom)
    keys = ("resonance_shift_hz", "length_shift", "linewidth_hz", "transmission", "reflection", "scatter",
            "photon_number_per_W")
    cols = {k: np.full(len(positions), np.nan) for k in keys}
    for i, pos in enumerate(positions):
        w = wire.at(*pos)
        zeta = effective_polarizability(w, mode)
        shift = find_resonance(geom, w.z, zeta)
        f = _Fields(geom, w.z, zeta, geom.omega0 + shift, 1.0)
        cols["resonance_shift_hz"][i] = shift / TWO_PI
        cols["length_shift"][i] = -geom.length * shift / geom.omega0
        cols["linewidth_hz"][i] = analytic_linewidth(geom, w.z, zeta, shift) / TWO_PI
        cols["transmission"][i] = abs(f.trans) ** 2
        cols["reflection"][i] = abs(f.refl) ** 2
        cols["scatter"][i] = f.scatter
        cols["photon_number_per_W"][i] = f.stored_energy / (HBAR * (geom.omega0 + shift))
    return cols


def sweep_recipe(cfg: ExperimentConfig, run: _Run, **_):
    """Transverse (x) sweep through an antinode and axial (z) sweep of the
    fully inserted wire."""
    geom = cfg.cavity()
    wire = cfg.nanowire(geom)
    mode = cavity_mode(geom)
    pr = cfg.profile
    z_a = mode.antinode_positions(-mode.period, mode.period)
    z_a = float(z_a[np.argmin(np.abs(z_a))])
    xs = np.linspace(pr.insertion_start, pr.insertion_stop, pr.insertion_points)
    cols = _sweep_table(geom, wire, [(x, wire.y, z_a) for x in xs])
    run.write_table("sweep_x.txt", {"x": xs, **cols}, f"transverse sweep at the antinode z = {z_a!r} m")
    zs = np.linspace(pr.z_start, pr.z_stop, pr.points)
    cols_z = _sweep_table(geom, wire, [(wire.x, wire.y, z) for z in zs])
    run.write_table("sweep_z.txt", {"z": zs, **cols_z}, "axial sweep of the fully inserted wire")
    out = {"max_shift_hz": float(np.max(np.abs(cols_z["resonance_shift_hz"]))),
           "max_length_shift": float(np.max(np.abs(cols_z["length_shift"]))),
           "empty_linewidth_hz": geom.kappa_empty / TWO_PI,
           "max_linewidth_hz": float(np.max(cols_z["linewidth_hz"]))}
    run.write_json("sweep.json", out)
    run.say(f"largest resonance shift {out['max_shift_hz'] / 1e9:.4g} GHz")
    return out


def scan_map_recipe(cfg: ExperimentConfig, run: _Run, **_):
    geom = cfg.cavity()
    wire = cfg.nanowire(geom)
    plan = cfg.scan_plan()
    if plan.plane == "Z":
        raise ConfigError("scan-map needs an XZ or YZ scan plane")
    pipe = OpticalPipeline(geom, wire, cfg.lock(), cfg.drift())
    m = raster_scan(plan, pipe)
    m.metadata["config_hash"] = cfg.hash
    g = gradient_channel(m, "cavity_shift", "z", name="G_z")
    err = m.channels["cavity_shift"] - m.channels["length_shift"]
    ok = m.valid & np.isfinite(err)
    ref = np.nanmax(np.abs(m.channels["length_shift"][ok])) if ok.any() else float("nan")
    out = {"masked_fraction": m.masked_fraction(),
           "max_abs_G_z_hz_per_m": float(np.nanmax(np.abs(g))) / TWO_PI if np.isfinite(g).any() else None,
           "lock_correction_error_rel": float(np.max(np.abs(err[ok])) / ref) if ok.any() else None}
    run.write_map("scan.nwmap", m)
    run.write_json("scan.json", out)
    run.say(f"masked {out['masked_fraction']:.3%}; lock correction error {out['lock_correction_error_rel']:.3%}")
    return out


def force_profile_recipe(cfg: ExperimentConfig, run: _Run, **_):
    geom = cfg.cavity()
    wire = cfg.nanowire(geom)
    pr = cfg.profile
    z = np.linspace(pr.z_start, pr.z_stop, pr.points)
    prof = axial_force_profile(geom, wire, z, pr.input_powers, with_adiabatic=True)
    cols = {"z": z}
    for p, row, n in zip(prof.input_powers, prof.fz, prof.photon_number):
        cols[f"F_z@{p:.3g}W"] = row
        cols[f"n@{p:.3g}W"] = n
    cols["T"] = prof.transmission[0]
    cols["F_z_adiabatic_per_W"] = prof.adiabatic_fz[0] / prof.input_powers[0]
    _, rel = gradient_frequency_shift(prof, osc=cfg.oscillator(), mode_angle=math.radians(cfg.mechanics.theta1_deg))
    cols["rel_shift_mode1"] = rel[-1]
    run.write_table("force_profile.txt", cols, "axial force of the locked cavity (N), photon number and transmission; z in m")
    unit = prof.fz[0] / prof.input_powers[0]
    near = lambda pts, d: np.interp(pts + d, z, unit)
    nodes = prof.nodes[(prof.nodes > z[0] + geom.wavelength / 20) & (prof.nodes < z[-1] - geom.wavelength / 20)]
    antis = prof.antinodes[(prof.antinodes > z[0]) & (prof.antinodes < z[-1])]
    antis_in = antis[(antis > z[0] + geom.wavelength / 20) & (antis < z[-1] - geom.wavelength / 20)]
    d = geom.wavelength / 20
    out = {
        "nodes": nodes, "antinodes": antis,
        "force_per_W_at_nodes": near(nodes, 0.0),
        "force_per_W_at_antinodes": near(antis, 0.0),
        # pushed away from nodes, pulled towards antinodes
        "nodes_repulsive": bool(np.all(near(nodes, d) > 0) and np.all(near(nodes, -d) < 0)),
        "antinodes_attractive": bool(np.all(near(antis_in, d) < 0) and np.all(near(antis_in, -d) > 0)),
        "max_force_per_W": float(np.nanmax(unit)), "min_force_per_W": float(np.nanmin(unit)),
        "extremum_asymmetry": extremum_asymmetry(unit),
        "invalid_points": int(np.sum(~prof.valid)),
    }
    run.write_json("force_profile.json", out)
    run.say(f"F_z per power in [{out['min_force_per_W'] * 1e9:.3g}, {out['max_force_per_W'] * 1e9:.3g}] fN/uW, "
            f"asymmetry {out['extremum_asymmetry']:.2f}")
    return out


def _force_map(cfg: ExperimentConfig, plan: ScanPlan):
    geom = cfg.cavity()
    wire = cfg.nanowire(geom)
    field = compute_force_field(plan, geom, wire)
    modes = cfg.modes()
    pipe = ForceMapPipeline(field, modes, cfg.probe_model(), cfg.triplet(), static_power=cfg.drive.static_power,
                            tone_power=cfg.drive.tone_power, probe_offset=tuple(cfg.probe.offset))
    m = raster_scan(plan, pipe)
    for name, arr in field.channels.items():
        m.add(name, arr, field.units.get(name, ""))
    m.metadata["config_hash"] = cfg.hash
    return m, pipe, modes


def force_map_recipe(cfg: ExperimentConfig, run: _Run, **_):
    plan = cfg.scan_plan()
    if plan.plane != "XZ":
        raise ConfigError("force-map needs an XZ scan plane")
    m, _, _ = _force_map(cfg, plan)
    k = cfg.estimation.average_pixels
    raw, _ = force_map_errors(m)
    for src in ("F_x", "F_z"):
        pixel_average(m, src, k, f"{src}_avg")
    avg = _averaged_error(m)
    out = {"median_error_raw": raw, "median_error_averaged": avg, "average_pixels": k,
           "masked_fraction": m.masked_fraction()}
    run.write_map("forcemap.nwmap", m)
    run.write_json("forcemap.json", out)
    run.say(f"median force error {raw:.2%} raw, {avg:.2%} after {k}-pixel averaging; masked {m.masked_fraction():.2%}")
    return out


def _averaged_error(m, threshold: float = 0.1) -> float:
    ft = np.hypot(m.channels["F_x_true"], m.channels["F_z_true"])
    fe = np.hypot(m.channels["F_x_avg"] - m.channels["F_x_true"], m.channels["F_z_avg"] - m.channels["F_z_true"])
    sel = m.valid & np.isfinite(fe) & (ft >= threshold * np.nanmax(ft))
    return float(np.median(fe[sel] / ft[sel]))


def track_line_recipe(cfg: ExperimentConfig, run: _Run, **_):
    """Triplet measurement along a z line: tracked mode-1 frequency against
    the shift derived from the injected force gradient."""
    s = cfg.scan
    center = tuple(s.center) if s.center is not None else tuple(cfg.wire.tip)
    n = s.resolution[0]
    plan = ScanPlan("Z", s.fast_extent, 0.0, center, (n, 1), s.dwell, seed=cfg.seed, serpentine=False)
    m, pipe, modes = _force_map(cfg, plan)
    line_shift = tracked_line_shifts(m, modes, pipe.static_power / pipe.tone_power, cfg.geometry.wavelength)
    run.write_table("track_line.txt", {"z": m.fast, **line_shift["columns"]},
                    "mode-1 frequency along z (Hz); predicted from the injected force gradient")
    run.write_map("track_line.nwmap", m)
    out = {k: v for k, v in line_shift.items() if k != "columns"}
    run.write_json("track_line.json", out)
    run.say(f"tracked vs gradient-derived shift: rms error {out['rms_error_rel']:.2%} of the largest shift")
    return out


def tracked_line_shifts(m, modes, power_ratio: float, wavelength: float) -> dict:
    """Measured mode-1 shift (full fit, tracker centre where the fit fell
    back) against the gradient-derived shift of the injected force."""
    from .merit import OscillatorParams
    f1 = modes.omega1 / TWO_PI
    meas = m.channels["f1"][0]
    meas = np.where(np.isfinite(meas), meas, m.channels["center1"][0])
    fz = m.channels["F_z_true"][0] * power_ratio
    osc = OscillatorParams(modes.effective_mass, modes.omega1)
    _, rel = gradient_frequency_shift(m.fast, fz, osc, wavelength=wavelength, mode_angle=modes.theta1)
    pred = f1 * rel
    ok = m.valid[0] & np.isfinite(meas)
    diff = (meas - f1 - pred)[ok]
    peak = float(np.max(np.abs(pred[ok])))
    return {"columns": {"f1_measured": meas, "f1_true": m.channels["f1_true"][0], "f1_predicted": f1 + pred,
                        "tracker_center": m.channels["center1"][0]},
            "rms_error_hz": float(np.sqrt(np.mean(diff ** 2))), "max_predicted_shift_hz": peak,
            "rms_error_rel": float(np.sqrt(np.mean(diff ** 2)) / peak), "valid_pixels": int(ok.sum())}


def thermal_noise_recipe(cfg: ExperimentConfig, run: _Run, **_):
    modes = cfg.modes()
    e = cfg.estimation
    f, psd, nseg = record_thermal_spectrum(modes, cfg.e_beta, e.thermal_averages, e.thermal_resolution,
                                           seed=cfg.seed, readout_noise_psd=e.readout_noise_psd)
    model = thermal_psd(modes, cfg.e_beta, TWO_PI * f, e.readout_noise_psd)
    run.write_table("thermal_psd.txt", {"frequency_Hz": f, "psd": psd, "psd_model": model},
                    f"one-sided displacement PSD (m^2/Hz), {nseg} averages")
    out = {"segments": nseg, "resolution_hz": float(f[1] - f[0])}
    run.write_json("thermal_noise.json", out)
    run.say(f"{nseg} averages at {out['resolution_hz']:.3g} Hz resolution")
    return out


def _sweep_frequencies(cfg):
    modes = cfg.modes()
    e = cfg.estimation
    f1, f2 = modes.omega1 / TWO_PI, modes.omega2 / TWO_PI
    span = e.sweep_span
    wide = np.linspace(0.92 * f1, 1.08 * f2, 10)
    return np.unique(np.concatenate([f1 + np.linspace(-span, span, e.sweep_points),
                                     f2 + 1.2 * np.linspace(-span, span, e.sweep_points), wide]))


def _drive_force(cfg) -> ForcePhasor:
    return ForcePhasor.along(cfg.drive.force, math.radians(cfg.drive.force_angle_deg))


def response_recipe(cfg: ExperimentConfig, run: _Run, **_):
    modes = cfg.modes()
    e = cfg.estimation
    d = cfg.drive
    ds = simulate_response_sweep(modes, _drive_force(cfg), _sweep_frequencies(cfg), cfg.e_beta, e.sweep_dwell,
                                 seed=cfg.seed, readout_noise_psd=e.readout_noise_psd,
                                 modulation=(d.input_power, d.modulation_depth * d.input_power))
    run.write_table("response.txt", {"frequency_Hz": ds.frequencies, "re": ds.response.real, "im": ds.response.imag,
                                     "magnitude": np.abs(ds.response), "phase_deg": ds.phase_deg},
                    f"complex displacement response (m) along e_beta = {e.e_beta_deg!r} deg")
    out = {"points": len(ds.frequencies)}
    run.write_json("response.json", out)
    run.say(f"{out['points']} response points")
    return out


def _fit_noise(cfg, f, psd):
    fit = fit_thermal_spectrum(f, psd, cfg.mechanics.temperature, prior=cfg.modes(), seed=cfg.seed)
    m = fit.modes
    return fit, {
        "f1_hz": m.omega1 / TWO_PI, "f2_hz": m.omega2 / TWO_PI,
        "Q1": m.quality(1), "Q2": m.quality(2), "effective_mass": m.effective_mass,
        "projections": list(fit.projections), "noise_floor": fit.noise_floor,
        "identifiable": list(fit.identifiable), "residual_rms": fit.residual_rms,
        "iterations": fit.iterations, "parameters": list(fit.parameter_names),
        "covariance": fit.covariance, "stderr": fit.stderr,
    }


def fit_noise_recipe(cfg: ExperimentConfig, run: _Run, input=None, **_):
    if input is not None:
        names, data = read_table(input)
        f, psd = data[:, names.index("frequency_Hz")], data[:, names.index("psd")]
    else:
        e = cfg.estimation
        f, psd, _ = record_thermal_spectrum(cfg.modes(), cfg.e_beta, e.thermal_averages, e.thermal_resolution,
                                            seed=cfg.seed, readout_noise_psd=e.readout_noise_psd)
    _, out = _fit_noise(cfg, f, psd)
    run.write_json("fit_noise.json", out)
    run.say(f"f1 = {out['f1_hz']:.6g} Hz (Q {out['Q1']:.4g}), f2 = {out['f2_hz']:.6g} Hz (Q {out['Q2']:.4g})")
    return out


def fit_response_recipe(cfg: ExperimentConfig, run: _Run, input=None, **_):
    """Fit the force vector. With ``input`` the response table is read and
    the configured mode pair is used; otherwise the full chain runs: thermal
    spectrum, its fit, a response sweep, and the force fit on fitted modes."""
    e = cfg.estimation
    d = cfg.drive
    if input is not None:
        names, data = read_table(input)
        ds = ResponseDataset(data[:, names.index("frequency_Hz")],
                             data[:, names.index("re")] + 1j * data[:, names.index("im")], e_beta=cfg.e_beta)
        modes = cfg.modes()
        noise = None
    else:
        truth = cfg.modes()
        f, psd, _ = record_thermal_spectrum(truth, cfg.e_beta, e.thermal_averages, e.thermal_resolution,
                                            seed=cfg.seed, readout_noise_psd=e.readout_noise_psd)
        fit, noise = _fit_noise(cfg, f, psd)
        modes = replace(fit.modes, theta1=truth.theta1, temperature=truth.temperature)
        ds = simulate_response_sweep(truth, _drive_force(cfg), _sweep_frequencies(cfg), cfg.e_beta, e.sweep_dwell,
                                     seed=cfg.seed + 1, readout_noise_psd=e.readout_noise_psd,
                                     modulation=(d.input_power, d.modulation_depth * d.input_power))
    res = fit_response(ds, modes, cfg.e_beta)
    out = {"force_magnitude_N": res.magnitude, "force_angle_deg": math.degrees(res.angle),
           "in_phase": list(res.force.in_phase), "quadrature": list(res.force.quadrature),
           "stderr": list(res.stderr), "covariance": res.covariance, "residual_rms": res.residual_rms,
           "rank_deficient": res.rank_deficient}
    if noise is not None:
        out["thermal_fit"] = noise
        out["injected_magnitude_N"] = cfg.drive.force
        out["injected_angle_deg"] = cfg.drive.force_angle_deg
    run.write_json("fit_response.json", out)
    run.say(f"|dF| = {out['force_magnitude_N'] * 1e15:.4g} fN at {out['force_angle_deg']:.3g} deg from e_z")
    return out


def lock_sim_recipe(cfg: ExperimentConfig, run: _Run, **_):
    geom = cfg.cavity()
    lock = cfg.lock()
    s = cfg.servo
    hw = geom.linewidth_length / 2.0
    a, fd = s.disturbance_amplitude, s.disturbance_frequency
    res = run_lock(lambda t: a * np.sin(TWO_PI * fd * t), cfg.drift(), lock, s.duration, hw, seed=cfg.seed)
    step = max(1, len(res.t) // 5000)
    run.write_table("lock.txt", {"t": res.t[::step], "fast": res.fast[::step], "slow": res.slow[::step],
                                 "residual": res.residual[::step]}, "lock corrections and residual length (m)")
    rej = measure_rejection(lock, fd, hw)
    out = {"locked": res.locked, "loss_time_s": res.loss_time, "residual_rms_m": res.residual_rms,
           "half_width_m": hw, "rejection_db": 20 * math.log10(rej),
           "rejection_db_analytic": 20 * math.log10(lock.closed_loop_correction_gain(fd))}
    run.write_json("lock.json", out)
    run.say(f"locked={res.locked}; {fd / 1e3:.3g} kHz rejection {out['rejection_db']:.1f} dB")
    return out


def map_export_recipe(cfg: ExperimentConfig, run: _Run, input=None, **_):
    if input is None:
        raise RecipeError("map-export needs --input <map.nwmap>")
    m = read_map(input)
    paths = export_map_text(m, run.out / "map_text")
    for p in paths:
        run._record(f"map_text/{p.name}", p.read_bytes())
    out = {"channels": len(paths), "shape": list(m.shape)}
    run.write_json("map_export.json", out)
    run.say(f"exported {len(paths)} channels")
    return out


_TABLE = {
    "merit-report": merit_report_recipe, "sweep": sweep_recipe, "scan-map": scan_map_recipe,
    "force-profile": force_profile_recipe, "force-map": force_map_recipe, "thermal-noise": thermal_noise_recipe,
    "response": response_recipe, "fit-noise": fit_noise_recipe, "fit-response": fit_response_recipe,
    "lock-sim": lock_sim_recipe, "track-line": track_line_recipe, "map-export": map_export_recipe,
}


def _versions() -> dict:
    return {"nanocavity_twin": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pydantic": pydantic.VERSION}


def run_recipe(name: str, cfg: ExperimentConfig, out, input=None) -> dict:
    """Run one recipe; returns the manifest. On failure the manifest is
    still written with ``status = "failed"`` and the exception re-raised."""
    if name not in _TABLE:
        raise RecipeError(f"unknown recipe {name!r}; choose from {', '.join(RECIPES)}")
    run = _Run(out)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.perf_counter()
    manifest = {"recipe": name, "config_hash": cfg.hash, "config": cfg.model_dump(mode="json"),
                "seed": cfg.seed, "versions": _versions(),
                "input": str(input) if input is not None else None}
    try:
        summary = _TABLE[name](cfg, run, input=input)
        manifest["status"] = "complete"
        manifest["summary"] = summary
    except Exception as exc:
        manifest["status"] = "failed"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        raise
    finally:
        manifest["artifacts"] = dict(sorted(run.artifacts.items()))
        manifest["messages"] = run.lines
        manifest["timing"] = {"started": started, "wall_time_s": time.perf_counter() - t0}
        atomic_write(run.out / "manifest.json",
                     json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n", mode="w")
    return manifest


__all__ = ["RECIPES", "RecipeError", "run_recipe", "read_table", "tracked_line_shifts",
           "SolverError", "EstimationError"]
