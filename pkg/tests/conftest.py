import numpy as np
import pytest

from qextreme.lienard import LienardParams, steady_state_lienard
from qextreme.mboson import MBosonParams, steady_state

# lines collected by the acceptance module, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []

LIENARD_REF = LienardParams(0.169, 0.12, 1.0, 0.035)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reference_params():
    """Two-boson model {gamma1, kappa1, gamma2, kappa2} = {6, 0, 1, 1}: nu = 1.5."""
    return MBosonParams.two_boson(6.0, 0.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def reference_dist(reference_params):
    return steady_state(reference_params, 500_000)


@pytest.fixture(scope="session")
def nu4_dist():
    return steady_state(MBosonParams.from_exponent(4.0), 100_000)


@pytest.fixture(scope="session")
def lienard_large():
    """Steady state of the cubic Lienard model at N_T = 500 (about 20 s)."""
    return steady_state_lienard(LIENARD_REF, 500)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
