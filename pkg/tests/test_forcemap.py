import math

import numpy as np
import pytest

from nanocavity_twin.cavity import cavity_mode
from nanocavity_twin.forcemap import ForceMapPipeline, compute_force_field, force_map_errors, shifted_modes
from nanocavity_twin.mapio import MASK_OK
from nanocavity_twin.optoforce import force_vector
from nanocavity_twin.scan import ScanPlan, raster_scan

LAM = 767e-9
TIP = (0.0, -5e-6, 0.0)


@pytest.fixture(scope="module")
def small_field(geom200, wire200):
    plan = ScanPlan("XZ", 0.2e-6, 0.2e-6, TIP, (9, 3), seed=4)
    return plan, compute_force_field(plan, geom200, wire200)


def test_force_field_matches_pointwise_force(small_field, geom200, wire200):
    plan, fm = small_field
    assert np.all(fm.mask == MASK_OK)
    mode = cavity_mode(geom200)
    for i, j in ((0, 0), (1, 4), (2, 8)):
        s = force_vector(geom200, wire200.at(*plan.position(i, j)), 1.0, mode=mode)
        assert fm.channels["F_z_per_W"][i, j] == pytest.approx(s.force[2], rel=1e-12)
        assert fm.channels["F_x_per_W"][i, j] == pytest.approx(s.force[0], rel=1e-12, abs=1e-30)
    # the grid gradient follows the field
    dz = np.gradient(fm.channels["F_z_per_W"][1], fm.pitch[1])
    np.testing.assert_allclose(fm.channels["dF_z_dz_per_W"][1], dz, rtol=1e-12)


def test_yz_plane_rejected(geom200, wire200):
    with pytest.raises(ValueError, match="XZ"):
        compute_force_field(ScanPlan("YZ", 0.1e-6, 0.1e-6, TIP, (3, 3)), geom200, wire200)


def test_shifted_modes_soften_with_positive_gradient(modes):
    g = np.array([[0.0, 0.0], [0.0, 1e-4]])
    soft = shifted_modes(modes, g)
    for i in (1, 2):
        e = modes.e(i)
        want = modes.omega(i) * (1 - e[1] ** 2 * 1e-4 / (2 * modes.stiffness(i)))
        assert soft.omega(i) == pytest.approx(want, rel=1e-12)
        assert soft.omega(i) < modes.omega(i)
    same = shifted_modes(modes, np.zeros((2, 2)))
    assert same.omega1 == modes.omega1 and same.omega2 == modes.omega2


def test_tone_depth_checked(small_field, modes):
    _, fm = small_field
    with pytest.raises(ValueError, match="negative"):
        ForceMapPipeline(fm, modes, static_power=5e-6, tone_power=1e-6)
    ForceMapPipeline(fm, modes, static_power=6e-6, tone_power=1e-6)


def test_small_map_recovers_force(small_field, modes):
    plan, fm = small_field
    pipe = ForceMapPipeline(fm, modes)
    m = raster_scan(plan, pipe)
    assert m.masked_fraction() < 0.2
    median, err = force_map_errors(m)
    assert len(err) > 10
    assert median < 0.3
    # in-phase force is what was injected; the true channels scale with tone power
    np.testing.assert_allclose(m.channels["F_z_true"], fm.channels["F_z_per_W"] * pipe.tone_power, rtol=1e-12)
    assert math.isfinite(np.nanmedian(m.channels["f1"]))
