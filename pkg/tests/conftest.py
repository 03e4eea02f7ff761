import numpy as np
import pytest

from hevcost.cycle import DrivingCycle, builtin_cycle
from hevcost.params import default_params
from hevcost.vehicle import demand_from_cycle

# (criterion number, passed, detail) rows appended by test_acceptance.py
ACCEPTANCE_LINES: list[tuple[int, bool, str]] = []


@pytest.fixture(scope="session")
def params():
    return default_params()


@pytest.fixture(scope="session")
def urban():
    return builtin_cycle("urban")


@pytest.fixture(scope="session")
def short_demand(params, urban):
    """The first 240 s of the urban cycle: enough variety, cheap to solve."""
    n = 240
    cyc = DrivingCycle(urban.t[:n], urban.speed[:n], urban.slope[:n], "urban240")
    return demand_from_cycle(cyc, params.vehicle)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
