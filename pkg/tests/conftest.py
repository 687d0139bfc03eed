import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qlab import NoiseSpec, PotentialSpec, SpectralBasis  # noqa: E402


@pytest.fixture
def basis8():
    return SpectralBasis.unit_interval(8)


@pytest.fixture
def noise8(basis8):
    return NoiseSpec(basis8, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


FAMILIES = [PotentialSpec("decreasing", 1.0), PotentialSpec("nonnegative", 1.0)]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
