import sys

import numpy as np
import pytest

from billiards.elliptic_geometry import EllipseParams


@pytest.fixture
def ellipse05():
    return EllipseParams.from_eccentricity(0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)



def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
