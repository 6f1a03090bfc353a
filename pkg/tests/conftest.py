import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vqmargin import minimax as mm

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Independent high-precision values for the reference family (k=3, d=2, M=1, n=100)
FAM0_DELTA_BIG = 0.110485434560398050687631931579
FAM0_RHO = 0.00690533966002487816797699572368
FAM0_DELTA = 0.0707106781186547524400844362105
FAM0_RISK = 0.00143228808880820502862535944182
FAM0_GAP4 = 0.000215791864375777442749281116365
FAM0_MASSES = (0.267677669529663688110021109053, 0.267677669529663688110021109053,
               0.232322330470336311889978890947, 0.232322330470336311889978890947)


@pytest.fixture
def fam0():
    return mm.build_family(3, 2, 1.0, n=100)


@pytest.fixture
def p0(fam0):
    return mm.p_sigma(fam0, [1, -1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
