import math
import time

import numpy as np
import pytest

from glsurf import bulk2d, spectral1d, spectral2d, thermo

CURVE_NU = np.linspace(0.0, 0.5 * math.pi, 17)
TABLE_B = [0.5, 0.625, 0.75, 0.875, 1.0]
TABLE_NU = [k * math.pi / 8 for k in range(5)]
E2_B = (0.85, 0.9, 0.94, 0.98)


class Timed:
    """A computed value with the wall time it took."""

    def __init__(self, fn):
        t = time.perf_counter()
        self.value = fn()
        self.seconds = time.perf_counter() - t


@pytest.fixture(scope="session")
def theta0_result():
    return spectral1d.find_theta0()


@pytest.fixture(scope="session")
def zeta_curve_timed():
    """The 17-point production curve (h = 0.1, box cap 80)."""
    return Timed(lambda: spectral2d.build_spectral_curve(CURVE_NU))


@pytest.fixture(scope="session")
def zeta_curve(zeta_curve_timed):
    return zeta_curve_timed.value


@pytest.fixture(scope="session")
def coarse_curve():
    """A cheap 9-point curve for plumbing tests (h = 0.25)."""
    return spectral2d.SpectralCurve(h=0.25, max_length=80.0).fit(np.linspace(0.0, 0.5 * math.pi, 9))


@pytest.fixture(scope="session")
def energy_table(zeta_curve):
    """E(b, nu) on a 5 x 5 grid from cells of size 4, 6, 8 (h = 0.25)."""
    return thermo.build_energy_table(TABLE_B, TABLE_NU, ells=(4.0, 6.0, 8.0), curve=zeta_curve)


_BULK = {}


def _e2_fit(h, Rs):
    # repeats share (b, R) squares, so samples are memoized
    res = bulk2d.BulkResolution(h)
    for b in E2_B:
        for R in Rs:
            if (b, R, h) not in _BULK:
                _BULK[b, R, h] = bulk2d.window_samples([b], [R], res, restarts=2)[0]
    return bulk2d.fit_E2([_BULK[b, R, h] for b in E2_B for R in Rs])


@pytest.fixture(scope="session")
def e2_production():
    """E2 from squares R = 10, 14, 18 at h = 0.25, extrapolated in R."""
    return Timed(lambda: _e2_fit(0.25, (10.0, 14.0, 18.0)))


@pytest.fixture(scope="session")
def e2_oracles():
    """Independent repeats: larger squares, and a refined grid."""
    return {
        "R=14,18,22 h=0.25": Timed(lambda: _e2_fit(0.25, (14.0, 18.0, 22.0))),
        "R=10,14,18 h=0.125": Timed(lambda: _e2_fit(0.125, (10.0, 14.0, 18.0))),
    }
