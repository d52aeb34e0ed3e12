"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run ``pytest -v tests/test_acceptance.py -s`` to see the lines inline; they
are also collected in the terminal summary.
"""
import math
import time

import numpy as np
import pytest
from scipy import signal

from nanocavity_twin.cavity import (CavityGeometry, NanowireScatterer, cavity_mode, find_resonance,
                                    gaussian_waist, sheet_coefficients)
from nanocavity_twin.config import load_config, shipped_config
from nanocavity_twin.constants import C_LIGHT, K_B, TWO_PI
from nanocavity_twin.estimation import (_thermal_model, _triplet_jacobian, _triplet_residuals, fit_response,
                                        simulate_response_sweep, triplet_tones)
from nanocavity_twin.mechanics import ForcePhasor, ModePair, max_time_step, simulate_trajectory, thermal_psd
from nanocavity_twin.merit import OscillatorParams, merit_report
from nanocavity_twin.optoforce import axial_force_profile, extremum_asymmetry, shift_from_gradient
from nanocavity_twin.recipes import run_recipe
from nanocavity_twin.scan import OpticalPipeline, ScanPlan, gradient_channel, raster_scan
from nanocavity_twin.servo import (DriftModel, LockConfig, ProbeReadoutModel, measure_rejection, probe_power,
                                   probe_reflection, run_lock)

LAM = 767e-9
TIP = (0.0, -5e-6, 0.0)


def rel(a, b):
    return abs(a - b) / abs(b)


def config(name):
    return load_config(shipped_config(name))


def one_period(geom, n):
    period = cavity_mode(geom).period
    return np.linspace(-period / 2, period / 2, n)


# ------------------------------------------------------------ 1

def test_criterion_01_figures_of_merit(acceptance):
    t0 = time.perf_counter()
    osc = OscillatorParams(1e-15, TWO_PI * 50e3, 5000.0, 300.0)
    rep = merit_report(TWO_PI * 3e18, osc, TWO_PI * 12.5e9)
    runtime = time.perf_counter() - t0
    zpf, spread = rep["delta_x_zpf"], rep["thermal_spread"]
    g0, ratio = rep["g0"] / TWO_PI, rep["g0_over_omega_m"]
    ok = (rel(zpf, 0.41e-12) <= 0.02 and rel(spread, 6.5e-9) <= 0.02 and rel(spread, 7e-9) <= 0.10
          and rel(g0, 1.23e6) <= 0.01 and rel(g0, 1.2e6) <= 0.05 and rel(ratio, 25.0) <= 0.05 and runtime < 1.0)
    acceptance(1, ok, f"dx_zpf={zpf * 1e12:.3f} pm, dr_th={spread * 1e9:.2f} nm, g0/2pi={g0 / 1e6:.3f} MHz, "
                      f"g0/Omega={ratio:.2f}, {runtime * 1e3:.1f} ms")
    assert ok


# ------------------------------------------------------------ 2

def test_criterion_02_cavity_shift(acceptance):
    t0 = time.perf_counter()
    cfg = config("paper_fig2")
    geom = cfg.cavity()
    wire = cfg.nanowire(geom)
    mode = cavity_mode(geom)
    z_a = mode.antinode_positions(-mode.period, mode.period)
    z_a = float(z_a[np.argmin(np.abs(z_a))])
    shift_a = find_resonance(geom, z_a, wire.zeta0)
    d_len = -geom.length * shift_a / geom.omega0
    z_n = float(mode.node_positions(-mode.period, mode.period)[0])
    shift_n = find_resonance(geom, z_n, wire.zeta0)
    runtime = time.perf_counter() - t0
    ghz = abs(shift_a) / TWO_PI / 1e9
    ok = (rel(ghz, 400.0) <= 0.03 and rel(d_len, 12e-9) <= 1e-9 and abs(shift_n) < 1e-3 * abs(shift_a)
          and runtime < 10.0)
    acceptance(2, ok, f"|dw0|/2pi={ghz:.1f} GHz, dL={d_len * 1e9:.6f} nm, node/antinode="
                      f"{abs(shift_n / shift_a):.1e}, {runtime:.1f} s")
    assert ok


# ------------------------------------------------------------ 3

def test_criterion_03_waist(acceptance):
    w = [gaussian_waist(CavityGeometry(length, 28e-6, 28e-6, LAM, t1=1e-3, t2=1e-3)) for length in (10e-6, 12e-6)]
    ok = all(1.6e-6 <= v <= 1.7e-6 and rel(v, 1.8e-6) <= 0.15 for v in w)
    acceptance(3, ok, f"w0(10 um)={w[0] * 1e6:.3f} um, w0(12 um)={w[1] * 1e6:.3f} um")
    assert ok


# ------------------------------------------------------------ 4

def test_criterion_04_force_scale(acceptance, geom200, wire200):
    z = one_period(geom200, 161)
    prof = axial_force_profile(geom200, wire200, z[np.abs(z) < 0.2e-6], input_powers=[1e-6])
    per_uw = np.max(np.abs(prof.fz[0])) / 1e-6 * 1e-6 * 1e15
    bound = 1e-6 / C_LIGHT * 1e15
    # momentum flux through a sheet with r = t = 1/2 in amplitude returns exactly P / c
    ts, rs = sheet_coefficients(1j)
    flux = (1 + abs(rs) ** 2 - abs(ts) ** 2) * 1e-6 / C_LIGHT * 1e15
    ok = 1.0 <= per_uw <= 4.0 and round(bound, 1) == 3.3 and rel(flux, bound) <= 0.01
    acceptance(4, ok, f"near-node force {per_uw:.2f} fN/uW, bound P/c={bound:.3f} fN/uW, flux check {flux:.3f}")
    assert ok


# ------------------------------------------------------------ 5

def test_criterion_05_force_structure(acceptance, geom200, wire200):
    t0 = time.perf_counter()
    z = np.linspace(-LAM, LAM, 400)
    prof = axial_force_profile(geom200, wire200, z, input_powers=[5e-6])
    runtime = time.perf_counter() - t0
    f = prof.fz[0]
    period = cavity_mode(geom200).period
    half = z[(z >= -LAM) & (z <= LAM - period)]
    shifted = axial_force_profile(geom200, wire200, half + period, input_powers=[5e-6]).fz[0]
    periodic = np.max(np.abs(np.interp(half, z, f) - shifted)) / np.max(np.abs(f))
    d = LAM / 20
    nodes = prof.nodes[(prof.nodes > z[0] + d) & (prof.nodes < z[-1] - d)]
    antis = prof.antinodes[(prof.antinodes > z[0] + d) & (prof.antinodes < z[-1] - d)]
    at = lambda pts: np.interp(pts, z, f)
    repulsive = bool(np.all(at(nodes + d) > 0) and np.all(at(nodes - d) < 0))
    attractive = bool(np.all(at(antis + d) < 0) and np.all(at(antis - d) > 0))
    asym = extremum_asymmetry(f)
    ok = periodic <= 0.01 and repulsive and attractive and 0.2 <= asym <= 0.4 and runtime < 60.0
    acceptance(5, ok, f"periodicity {periodic:.2e} of extremum, nodes repulsive={repulsive}, "
                      f"antinodes attractive={attractive}, asymmetry {asym:.3f}, 400 points in {runtime:.1f} s")
    assert ok


# ------------------------------------------------------------ 6

def test_criterion_06_cross_validation(acceptance, geom200, wire200):
    prof = axial_force_profile(geom200, wire200, one_period(geom200, 81), input_powers=[1e-6], with_adiabatic=True)
    f, fa = prof.fz[0], prof.adiabatic_fz[0]
    dev = np.max(np.abs(f - fa)) / np.max(np.abs(f))
    ok = dev <= 0.10
    acceptance(6, ok, f"max |maxwell - adiabatic| = {dev:.2e} of the peak over one period")
    assert ok


# ------------------------------------------------------------ 7

def test_criterion_07_softening(acceptance, tmp_path):
    osc = OscillatorParams(1e-15, math.sqrt(1e-4 / 1e-15), 5000.0, 300.0)
    shift = shift_from_gradient(1.5e-7, osc)
    man = run_recipe("track-line", config("paper_fig3"), tmp_path)
    err = man["summary"]["rms_error_rel"]
    ok = abs(shift + 7.5e-4) <= 1e-12 * 7.5e-4 and err <= 0.15
    acceptance(7, ok, f"injected-gradient shift {shift:.6e}, tracked vs gradient-derived rms error {err:.1%}")
    assert ok


# ------------------------------------------------------------ 8

def test_criterion_08_force_recovery(acceptance, tmp_path):
    cfg = config("paper_fig3")
    man = run_recipe("fit-response", cfg, tmp_path)
    s = man["summary"]
    mag, ang = s["force_magnitude_N"], s["force_angle_deg"]
    modes = cfg.modes()
    f1, f2 = modes.omega1 / TWO_PI, modes.omega2 / TWO_PI
    freqs = np.concatenate([np.linspace(f1 - 30, f1 + 30, 11), np.linspace(f2 - 36, f2 + 36, 11)])
    p0 = cfg.drive.input_power
    depths = np.linspace(0.1, 1.0, 6)
    mags = []
    for k, depth in enumerate(depths):
        force = ForcePhasor.along(cfg.drive.force * depth / cfg.drive.modulation_depth, 0.0)
        ds = simulate_response_sweep(modes, force, freqs, cfg.e_beta, 0.1, seed=100 + k, modulation=(p0, depth * p0))
        mags.append(fit_response(ds, modes, cfg.e_beta).magnitude)
    r2 = np.corrcoef(depths, mags)[0, 1] ** 2
    ok = rel(mag, cfg.drive.force) <= 0.10 and abs(ang - cfg.drive.force_angle_deg) <= 5.0 and r2 > 0.999
    acceptance(8, ok, f"|dF|={mag * 1e15:.3f} fN (injected {cfg.drive.force * 1e15:.1f}), angle {ang:.2f} deg, "
                      f"linearity R^2={r2:.5f}")
    assert ok


# ------------------------------------------------------------ 9

def test_criterion_09_triplet_map(acceptance, tmp_path):
    cfg = config("paper_fig4")
    assert tuple(cfg.scan.resolution) == (100, 100) and cfg.estimation.block_length == 0.1
    t0 = time.perf_counter()
    man = run_recipe("force-map", cfg, tmp_path)
    runtime = time.perf_counter() - t0
    s = man["summary"]
    raw, avg, masked = s["median_error_raw"], s["median_error_averaged"], s["masked_fraction"]
    ok = avg < 0.10 and masked < 0.01 and runtime < 600.0
    acceptance(9, ok, f"median error {avg:.1%} after {s['average_pixels']}-pixel averaging ({raw:.1%} raw), "
                      f"masked {masked:.2%}, {runtime:.0f} s")
    assert ok


# ------------------------------------------------------------ 10

def test_criterion_10_scan_phenomenology(acceptance):
    cfg = config("paper_fig2")
    geom = cfg.cavity()
    wire = cfg.nanowire(geom)
    m = raster_scan(ScanPlan("Z", LAM, 0.0, TIP, (241, 1), seed=1), OpticalPipeline(geom, wire, cfg.lock(), cfg.drift()))
    z = m.fast
    t = m.channels["transmission"][0]
    stripes = int(np.argmax(np.abs(np.fft.rfft(t[:-1] - t[:-1].mean())))) == 2
    sc = m.channels["scatter"][0]
    anti = int(np.argmin(np.abs(z - LAM / 4)))
    win = np.abs(z - z[anti]) < LAM / 8
    peak = int(np.argmax(np.where(win, sc, -np.inf)))
    rings = sc[anti] < 0.95 * sc[peak] and abs(z[peak] - z[anti]) > 5e-9
    g = gradient_channel(m, "cavity_shift", "z", wavelength=LAM)[0]
    gmax = np.nanmax(np.abs(g)) / TWO_PI
    # extrema sit on the node flanks, a quarter of the stripe period from the shift extrema
    shift = m.channels["resonance_shift"][0]
    first = slice(0, len(z) // 2)
    offset = abs(z[first][np.nanargmax(np.abs(g[first]))] - z[first][np.argmax(np.abs(shift[first]))]) % (LAM / 4)
    on_flank = abs(min(offset, LAM / 4 - offset) - LAM / 8) <= LAM / 40
    cs, ls = m.channels["cavity_shift"][0], m.channels["length_shift"][0]
    lock_err = np.max(np.abs(cs - ls)) / np.max(np.abs(ls))
    ok = stripes and rings and on_flank and rel(gmax, 3e18) <= 0.10 and lock_err <= 0.02
    acceptance(10, ok, f"stripes={stripes}, rings={bool(rings)}, |G_z|/2pi max {gmax / 1e18:.3f} GHz/nm on node "
                       f"flanks={on_flank}, lock correction error {lock_err:.2e}")
    assert ok


# ------------------------------------------------------------ 11

def test_criterion_11_servo(acceptance, geom200):
    lock = LockConfig()
    hw = geom200.linewidth_length / 2
    rej = 20 * math.log10(measure_rejection(lock, 50e3, hw))
    rate = 1e-9 / 60
    drift = run_lock(lambda t: 0.0 * t, DriftModel(rate=rate), lock, 2.0, hw)
    late = drift.t > 1.0
    slope = np.polyfit(drift.t[late], drift.slow[late], 1)[0]
    steady = abs(np.mean(drift.residual[late])) < 1e-3 * hw and rel(slope, rate) <= 0.01
    fast = run_lock(lambda t: 0.0 * t, DriftModel(rate=2 * lock.slow_slew), lock, 0.5, hw)
    slow = run_lock(lambda t: 0.0 * t, DriftModel(rate=0.5 * lock.slow_slew), lock, 0.5, hw)
    ok = rej <= -20 and steady and drift.locked and not fast.locked and slow.locked
    acceptance(11, ok, f"50 kHz rejection {rej:.1f} dB, drift residual mean {np.mean(drift.residual[late]):.1e} m, "
                       f"lock lost above slew={not fast.locked} (at {fast.loss_time:.3f} s), kept below={slow.locked}")
    assert ok


# ------------------------------------------------------------ 12

def _fd_rel_error(analytic, fd):
    return float(np.max(np.abs(analytic - fd)) / np.max(np.abs(fd)))


def test_criterion_12_numerical_hygiene(acceptance):
    errs = {}
    model = ProbeReadoutModel(phase_offset=0.3)
    worst = 0.0
    for x, z in np.random.default_rng(0).uniform(-1e-6, 1e-6, (10, 2)):
        h = 1e-12
        fd = np.array([(probe_power(x + h, z, model) - probe_power(x - h, z, model)) / (2 * h),
                       (probe_power(x, z + h, model) - probe_power(x, z - h, model)) / (2 * h)])
        g = probe_reflection((x, z), model).gradient
        worst = max(worst, float(np.max(np.abs(g - fd))) / (2 * model.k * model.mean_power))
    errs["probe"] = worst

    modes = ModePair.nominal()
    w = TWO_PI * np.linspace(49.9e3, 60.1e3, 400)
    p = np.array([modes.omega1, modes.omega2, math.log(modes.gamma1), math.log(modes.gamma2),
                  math.log(3e-7), math.log(5e-7), math.log(1e-29)])
    mod, jac = _thermal_model(p, w, 2)
    jac = jac / mod[:, None]
    worst = 0.0
    for k in range(len(p)):
        h = 1e-7 * max(abs(p[k]), 1.0)
        up, dn = p.copy(), p.copy()
        up[k] += h
        dn[k] -= h
        fd = (np.log(_thermal_model(up, w, 2)[0]) - np.log(_thermal_model(dn, w, 2)[0])) / (2 * h)
        worst = max(worst, _fd_rel_error(jac[:, k], fd))
    errs["thermal"] = worst

    wt = TWO_PI * triplet_tones(modes.omega1 / TWO_PI + 3.0)
    q = np.array([2e-5, -1e-5, modes.omega1, modes.gamma1])
    zz = np.full(3, 1e-9 + 0j)
    jac = _triplet_jacobian(q, wt, 1e-9)
    worst = 0.0
    for k in range(4):
        h = 1e-3 if k >= 2 else 1e-3 * abs(q[k])
        up, dn = q.copy(), q.copy()
        up[k] += h
        dn[k] -= h
        fd = (_triplet_residuals(up, wt, zz, 1e-9) - _triplet_residuals(dn, wt, zz, 1e-9)) / (2 * h)
        worst = max(worst, _fd_rel_error(jac[:, k], fd))
    errs["triplet"] = worst

    m = ModePair.nominal(quality=50.0)
    tr = simulate_trajectory(m, duration=2.0, seed=11, thermalize=True)
    equip = max(rel(m.stiffness(k + 1) * np.mean(tr.modal[:, k] ** 2), K_B * m.temperature) for k in (0, 1))

    dt = max_time_step(m)
    nper = int(round(0.01 / dt))
    beta = 0.4

    def ratio(duration, seed):
        r = simulate_trajectory(m, dt=dt, duration=duration, seed=seed, e_beta=beta, thermalize=True).readout
        f, pxx = signal.welch(r, fs=1 / dt, nperseg=nper, noverlap=0, window="hann")
        band = (f > 30e3) & (f < 80e3)
        return pxx[band] / thermal_psd(m, beta, TWO_PI * f[band])

    # one 50-average estimate: bin scatter is 1/sqrt(50), so compare five-bin means
    r50 = ratio(0.51, 3)
    blocks = r50[: len(r50) // 5 * 5].reshape(-1, 5).mean(axis=1)
    psd50 = float(np.mean(np.abs(blocks - 1)))
    # per-bin bias of the estimator from 2000 averages
    bias = float(np.max(np.abs(ratio(20.01, 21) - 1)))

    ok = (max(errs.values()) <= 1e-6 and equip <= 0.05 and psd50 <= 0.10
          and abs(np.median(r50) - 1) <= 0.05 and bias <= 0.10)
    acceptance(12, ok, f"FD rel errors probe {errs['probe']:.1e} thermal {errs['thermal']:.1e} triplet "
                       f"{errs['triplet']:.1e}, equipartition {equip:.1%}, 50-avg mean 5-bin deviation {psd50:.1%} "
                       f"(median {np.median(r50):.3f}), per-bin bias {bias:.1%}")
    assert ok
