import warnings

import numpy as np
import pytest

from meanfield.config import preset
from meanfield.landscape import Configuration

warnings.filterwarnings("ignore", category=RuntimeWarning)

VERDICTS = []


@pytest.fixture(scope="session")
def rect():
    return preset("rect-torus-n2").data()


@pytest.fixture(scope="session")
def xi3(rect):
    return Configuration(rect.surface, [(0.5, 0.75)])


@pytest.fixture(scope="session")
def xi1(rect):
    return Configuration(rect.surface, [(0.5, 0.0)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for v in sorted(VERDICTS, key=lambda v: v.number):
        terminalreporter.write_line(v.line())
    n = sum(v.passed for v in VERDICTS)
    terminalreporter.write_line(f"{n}/{len(VERDICTS)} criteria passed")
