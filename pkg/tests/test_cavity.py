import math
import warnings

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nanocavity_twin.cavity import (CavityGeometry, NanowireScatterer, SolverError, analytic_linewidth,
                                    calibrate_zeta0, cavity_mode, coupling_vector, effective_polarizability,
                                    fit_linewidth, gaussian_waist, resonance_shift_at, scatter_power, solve_cavity,
                                    thermal_linewidth_broadening)
from nanocavity_twin.constants import C_LIGHT, TWO_PI
from nanocavity_twin.merit import OscillatorParams

LAM = 767e-9


def geometry(length=12e-6, **kw):
    base = dict(t1=0.0008, t2=0.0153159, l1=0.0, l2=0.0153159)
    base.update(kw)
    return CavityGeometry(length, 28e-6, 28e-6, LAM, **base)


def oracle_transmission(geom, z, zeta, omega):
    """Independent cascade of 2x2 transfer matrices (outside-in-outside)."""
    phase = np.exp(1j * geom.mirror_phase)

    def interface(r, rp, t, tp):
        return np.array([[t * tp - r * rp, rp], [-r, 1.0]]) / tp

    def prop(d):
        k = omega / C_LIGHT
        return np.array([[np.exp(1j * k * d), 0], [0, np.exp(-1j * k * d)]])

    ts = 1.0 / (1.0 - 1j * zeta)
    rs = 1j * zeta * ts
    m1 = interface(-geom.r1 * np.conj(phase), geom.r1 * phase, math.sqrt(geom.t1), math.sqrt(geom.t1))
    m2 = interface(geom.r2 * phase, -geom.r2 * np.conj(phase), math.sqrt(geom.t2), math.sqrt(geom.t2))
    sheet = interface(rs, rs, ts, ts)
    total = m2 @ prop(geom.length / 2 - z) @ sheet @ prop(geom.length / 2 + z) @ m1
    return abs(np.linalg.det(total) / total[1, 1]) ** 2


def oracle_peak(geom, z, zeta, guess, span):
    d = guess + np.linspace(-span, span, 4001)
    tr = np.array([oracle_transmission(geom, z, zeta, geom.omega0 + x) for x in d])
    i = int(np.argmax(tr))
    y0, y1, y2 = tr[i - 1:i + 2]
    step = d[1] - d[0]
    return d[i] + 0.5 * step * (y0 - y2) / (y0 - 2 * y1 + y2)


# ------------------------------------------------------------------ geometry

def test_waist_values_against_high_precision():
    def ref(length):
        g = 1 - mp.mpf(length) / mp.mpf(28e-6)
        return mp.sqrt(mp.mpf(length) * mp.mpf(LAM) / mp.pi * mp.sqrt((1 + g) / (4 * (1 - g))))
    for length, expect in ((12e-6, 1.67e-6), (10e-6, 1.62e-6)):
        w = gaussian_waist(geometry(length))
        assert w == pytest.approx(float(ref(length)), rel=1e-13)
        assert w == pytest.approx(expect, rel=0.01)
        assert abs(w / 1.8e-6 - 1) < 0.15


def test_waist_shrinks_monotonically_towards_zero_length():
    lengths = np.geomspace(1e-10, 12e-6, 30)
    w = [gaussian_waist(geometry(length)) for length in lengths]
    assert np.all(np.diff(w) > 0)
    assert w[0] < 0.1 * w[-1]


def test_unstable_geometry_rejected():
    with pytest.raises(ValueError):
        CavityGeometry(60e-6, 28e-6, 28e-6, LAM, 0.01, 0.01)
    with pytest.raises(ValueError):
        CavityGeometry(12e-6, 28e-6, 28e-6, LAM, 0.6, 0.01, 0.5)


def test_finesse_range_reproducible():
    for f in (400.0, 40000.0):
        g = CavityGeometry.from_finesse(f, length=12e-6, roc1=28e-6, roc2=28e-6, wavelength=LAM)
        assert g.finesse == pytest.approx(f, rel=1e-12)


# ------------------------------------------------------------ polarizability

def test_effective_polarizability_limits():
    mode = cavity_mode(geometry())
    w = NanowireScatterer(0.05 + 0.001j, tip_position=(0.0, -np.inf, 0.0))
    assert effective_polarizability(w, mode) == pytest.approx(0.05 + 0.001j, rel=1e-15)
    side = w.at(x=mode.waist)
    assert abs(effective_polarizability(side, mode)) == pytest.approx(math.exp(-2) * abs(w.zeta0), rel=1e-12)
    half = w.at(y=0.0)
    assert effective_polarizability(half, mode) == pytest.approx(w.zeta0 / 2, rel=1e-15)


def test_negative_loss_rejected_and_thick_wire_warns():
    with pytest.raises(ValueError):
        NanowireScatterer(0.01 - 0.001j)
    thick = NanowireScatterer(0.01, radius=LAM / 3, tip_position=(0, -5e-6, 0))
    with pytest.warns(UserWarning, match="thin-sheet"):
        solve_cavity(geometry(), thick, with_linewidth=False)


# ----------------------------------------------------------------- solve

def test_empty_symmetric_lossless_cavity_transmits_everything():
    g = CavityGeometry(12e-6, 28e-6, 28e-6, LAM, 0.01, 0.01)
    sol = solve_cavity(g, None)
    assert sol.transmission == pytest.approx(1.0, abs=1e-12)
    assert sol.reflection == pytest.approx(0.0, abs=1e-12)
    assert sol.resonance_shift == pytest.approx(0.0, abs=1e-6 * g.kappa_empty)


def test_node_leaves_cavity_unperturbed(geom200, wire200):
    mode = cavity_mode(geom200)
    node = mode.node_positions(-LAM, LAM)[1]
    anti = node + mode.period / 2
    empty = solve_cavity(geom200, None)
    sol = solve_cavity(geom200, wire200.at(z=node))
    s_anti = resonance_shift_at(geom200, wire200.at(z=anti), mode)
    assert abs(sol.resonance_shift) < 1e-3 * abs(s_anti)
    kappa = analytic_linewidth(geom200, node, sol.zeta_eff, sol.resonance_shift)
    assert kappa == pytest.approx(analytic_linewidth(geom200, 0.0, 0j, 0.0), rel=1e-5)
    assert sol.linewidth == pytest.approx(empty.linewidth, rel=1e-5)
    assert sol.transmission == pytest.approx(empty.transmission, rel=1e-5)
    assert scatter_power(sol) < 1e-6 * solve_cavity(geom200, wire200.at(z=anti)).scatter_fraction


def test_calibrated_antinode_shift(geom200, wire200):
    mode = cavity_mode(geom200)
    anti = mode.antinode_positions(-LAM, LAM)
    sol = solve_cavity(geom200, wire200.at(z=anti[np.argmin(np.abs(anti))]), with_linewidth=False)
    assert abs(sol.equivalent_length_shift) == pytest.approx(12e-9, rel=1e-9)
    assert sol.equivalent_length_shift == pytest.approx(-geom200.length * sol.resonance_shift / geom200.omega0,
                                                        rel=1e-14)
    assert abs(sol.resonance_shift) / TWO_PI == pytest.approx(391e9, rel=0.005)


@pytest.mark.parametrize("z", [-2.1e-6, 0.05e-6, 0.2e-6, 3.3e-6])
def test_energy_conservation(geom200, wire200, z):
    sol = solve_cavity(geom200, wire200.at(z=z), with_linewidth=False)
    total = sol.transmission + sol.reflection + sol.scatter_fraction + sol.mirror_loss_fraction
    assert total == pytest.approx(1.0, abs=1e-9)


@given(st.floats(-4e-6, 4e-6), st.floats(0.0, 0.02), st.floats(-2e-6, 2e-6))
@settings(max_examples=40, deadline=None)
def test_energy_conservation_property(z, loss, x):
    g = geometry()
    w = NanowireScatterer(complex(0.05, loss), tip_position=(x, -5e-6, z))
    sol = solve_cavity(g, w, detuning=0.3 * g.kappa_empty, with_linewidth=False)
    total = sol.transmission + sol.reflection + sol.scatter_fraction + sol.mirror_loss_fraction
    assert total == pytest.approx(1.0, abs=1e-9)


def test_lossy_wire_broadens_linewidth(geom200, wire200):
    empty = analytic_linewidth(geom200, 0.0, 0j, 0.0)
    for z in (0.05e-6, 0.1e-6, 0.19e-6):
        sol = solve_cavity(geom200, wire200.at(z=z))
        assert sol.linewidth >= empty * (1 - 1e-9)


def test_analytic_linewidth_matches_lorentzian_fit(geom200, wire200):
    mode = cavity_mode(geom200)
    for z in (0.07e-6, 0.19e-6):
        w = wire200.at(z=z)
        zeta = effective_polarizability(w, mode)
        center = resonance_shift_at(geom200, w, mode)
        fit, resid = fit_linewidth(geom200, z, zeta, center)
        assert analytic_linewidth(geom200, z, zeta, center) == pytest.approx(fit, rel=1e-3)
        assert resid < 1e-2


def test_weak_scatterer_against_transfer_matrix_oracle():
    g = geometry()
    mode = cavity_mode(g)
    for z in (0.05e-6, 0.1e-6, 0.15e-6):
        zeta = 1e-3
        shift = resonance_shift_at(g, NanowireScatterer(zeta, tip_position=(0, -np.inf, z)), mode)
        peak = oracle_peak(g, z, zeta, shift, 0.5 * g.kappa_empty)
        assert peak == pytest.approx(shift, rel=0.02)
        # first-order dispersive shift follows the local intensity
        anti = mode.antinode_positions(-LAM, LAM)
        a = anti[np.argmin(np.abs(anti))]
        s_anti = resonance_shift_at(g, NanowireScatterer(zeta, tip_position=(0, -np.inf, a)), mode)
        assert shift / s_anti == pytest.approx(float(mode.intensity_profile(z)), rel=0.02)


def test_half_wavelength_periodicity(geom200, wire200):
    mode = cavity_mode(geom200)
    weak = NanowireScatterer(1e-5, tip_position=(0.0, -np.inf, 0.0))
    for z in (0.03e-6, 0.11e-6, 0.3e-6):
        a = resonance_shift_at(geom200, weak.at(z=z), mode)
        b = resonance_shift_at(geom200, weak.at(z=z + LAM / 2), mode)
        assert b == pytest.approx(a, rel=1e-6)
        # a strong wire pulls the resonance, so the field period stretches slightly
        a = resonance_shift_at(geom200, wire200.at(z=z), mode)
        b = resonance_shift_at(geom200, wire200.at(z=z + LAM / 2), mode)
        assert b == pytest.approx(a, rel=5e-3)


def test_transverse_gaussian_profile():
    g = geometry()
    mode = cavity_mode(g)
    anti = mode.antinode_positions(-LAM, LAM)
    w = NanowireScatterer(1e-4, tip_position=(0.0, -np.inf, anti[np.argmin(np.abs(anti))]))
    s0 = resonance_shift_at(g, w, mode)
    for x in (0.3e-6, 1e-6, 2e-6):
        ratio = resonance_shift_at(g, w.at(x=x), mode) / s0
        assert ratio == pytest.approx(math.exp(-2 * x * x / mode.waist ** 2), rel=0.01)


def test_wire_outside_cavity_is_an_error(geom200, wire200):
    with pytest.raises(SolverError):
        solve_cavity(geom200, wire200.at(z=7e-6))


# --------------------------------------------------------------- coupling

def test_coupling_vector_extrema(geom200, wire200):
    mode = cavity_mode(geom200)
    nodes = mode.node_positions(-LAM, LAM)
    node = nodes[np.argmin(np.abs(nodes))]
    zs = node + np.linspace(-mode.period / 2, mode.period / 2, 161)
    gz = np.array([coupling_vector(geom200, wire200.at(z=z), mode=mode)[2] for z in zs])
    assert np.max(np.abs(gz)) / TWO_PI == pytest.approx(3e18, rel=0.1)
    # steepest on the node flanks, a period/4 from the node
    flank = abs(zs[np.argmax(np.abs(gz))] - node)
    assert flank == pytest.approx(mode.period / 4, abs=mode.period / 20)
    anti = mode.antinode_positions(-LAM, LAM)
    a = anti[np.argmin(np.abs(anti))]
    g_anti = coupling_vector(geom200, wire200.at(z=a), mode=mode)
    assert abs(g_anti[2]) < 1e-2 * np.max(np.abs(gz))
    xs = np.linspace(0.2, 1.2, 11) * mode.waist
    gx = [abs(coupling_vector(geom200, wire200.at(x=x, z=a), mode=mode)[0]) for x in xs]
    assert xs[int(np.argmax(gx))] == pytest.approx(mode.waist / 2, rel=0.1)
    assert max(gx) / TWO_PI == pytest.approx(0.3e18, rel=0.5)


def test_coupling_step_validated(geom200, wire200):
    with pytest.raises(ValueError):
        coupling_vector(geom200, wire200, step=0.0)


# ----------------------------------------------------------------- scatter

def test_scatter_zero_without_loss(geom200):
    re = calibrate_zeta0(geom200, 12e-9, 0.0)
    sol = solve_cavity(geom200, NanowireScatterer(re, tip_position=(0, -5e-6, 0.1e-6)), with_linewidth=False)
    assert scatter_power(sol) == 0.0


def test_scatter_is_non_monotonic_in_insertion():
    # finesse 1000: the wire loss overtakes the mirror budget during insertion
    g = geometry(t1=0.00016, t2=0.00306318, l2=0.00306318)
    re = calibrate_zeta0(g, 12e-9, 0.0015)
    mode = cavity_mode(g)
    anti = mode.antinode_positions(-LAM, LAM)
    a = anti[np.argmin(np.abs(anti))]
    ys = np.linspace(3e-6, -5e-6, 80)
    sc = [solve_cavity(g, NanowireScatterer(complex(re, 0.0015), tip_position=(0.0, y, a + 20e-9)),
                       with_linewidth=False).scatter_fraction for y in ys]
    i = int(np.argmax(sc))
    assert 0 < i < len(ys) - 1
    assert sc[-1] < 0.95 * sc[i]


def test_thermal_linewidth_broadening():
    osc = OscillatorParams(1e-15, TWO_PI * 50e3, 5000, 300)
    assert thermal_linewidth_broadening(TWO_PI * 3e18, osc) / TWO_PI == pytest.approx(19.5e9, rel=0.01)
    assert thermal_linewidth_broadening(TWO_PI * 3e18, OscillatorParams(1e-15, TWO_PI * 50e3, 5000, 0)) == 0
    cold = OscillatorParams(1e-15, TWO_PI * 50e3, 5000, 0.02)
    assert thermal_linewidth_broadening(TWO_PI * 3e18, cold) / TWO_PI == pytest.approx(160e6, rel=0.01)
