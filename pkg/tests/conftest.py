import numpy as np
import pytest

from mixlag.flowfield import Domain, VelocityField
from mixlag.scenario import Scenario

# criterion number -> PASS/FAIL line, filled by test_acceptance
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def shear_small():
    return Scenario(VelocityField.shear(0.5), 32, 32)


@pytest.fixture(scope="session")
def gyre_small():
    return Scenario(VelocityField.double_gyre(), 32, 32)


@pytest.fixture(scope="session")
def zero_dirichlet_small():
    return Scenario(VelocityField.zero(Domain.SQUARE), 32, 16)


@pytest.fixture(scope="session")
def zero_torus_small():
    return Scenario(VelocityField.zero(Domain.TORUS), 32, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
