import numpy as np
import pytest

from nanocavity_twin.cavity import CavityGeometry, NanowireScatterer, calibrate_zeta0
from nanocavity_twin.mechanics import ModePair

ZETA_IMAG = 0.0015


@pytest.fixture(scope="session")
def geom200():
    """Finesse-200 cavity, output coupler much leakier than the pump mirror."""
    return CavityGeometry(12e-6, 28e-6, 28e-6, 767e-9, t1=0.0008, t2=0.0153159, l1=0.0, l2=0.0153159)


@pytest.fixture(scope="session")
def wire200(geom200):
    re = calibrate_zeta0(geom200, 12e-9, ZETA_IMAG)
    return NanowireScatterer(complex(re, ZETA_IMAG), tip_position=(0.0, -5e-6, 0.0))


@pytest.fixture(scope="session")
def modes():
    return ModePair.nominal()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per criterion, printed in the summary."""
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        return ok
    return record
