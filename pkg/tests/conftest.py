import warnings

import numpy as np
import pytest
from scipy.integrate import IntegrationWarning

from fchoquard import limiting as lim
from fchoquard import penalized as pz
from fchoquard import regime as rg


ACCEPTANCE_LINES = []


def pytest_configure(config):
    warnings.filterwarnings("ignore", category=IntegrationWarning)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""
    def report(k, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        assert ok, line
    return report


@pytest.fixture
def rng():
    return np.random.default_rng(20260101)


@pytest.fixture(scope="session")
def q1_setup():
    """Two-dimensional Q1 problem with the default compactly supported potential."""
    params = rg.ProblemParams(2, 0.5, 1.0, 2.2)
    pen = rg.admissible_penalization(params, "Q1")
    pot = pz.PotentialSpec()
    spec = pz.PenalizationSpec.for_potential(pen, pot)
    return params, pen, pot, spec


@pytest.fixture(scope="session")
def ground_state_2d():
    params = rg.ProblemParams(2, 0.5, 1.0, 2.0)
    st = lim.ground_state_solve(1.0, params, config=lim.SolverConfig(eta0=0.5))
    return params, st


@pytest.fixture(scope="session")
def q1_ladder(q1_setup):
    """Concentration scan on the ladder 0.2, 0.1, 0.05 (default 512^2 box, L = 2)."""
    params, pen, pot, spec = q1_setup
    return pz.concentration_scan(spec, pot, params, [0.2, 0.1, 0.05])
