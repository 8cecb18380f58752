import logging
import warnings

import pytest

from holonomic.qsystem import Gate, SystemParams
from holonomic.units import ps_to_internal

EPS = 1000.0
OMEGA = 25.0
T_AD = ps_to_internal(7.5)

# lines collected by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def paper_params(gate=Gate.GATE1, **kw):
    base = dict(epsilon=EPS, omega=OMEGA, t_ad=T_AD, gate=gate)
    base.update(kw)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return SystemParams(**base)


@pytest.fixture
def gate1():
    return paper_params(Gate.GATE1)


@pytest.fixture
def gate2():
    return paper_params(Gate.GATE2)


@pytest.fixture(autouse=True)
def _quiet_logs():
    logging.getLogger("holonomic").setLevel(logging.ERROR)
    yield


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
