import numpy as np
import pytest
from hypothesis import settings

from deltasampling.schedule import build_schedule

# property tests draw the same examples on every run
settings.register_profile("deterministic", derandomize=True)
settings.load_profile("deterministic")


@pytest.fixture
def sched16():
    return build_schedule("linear_beta", 16)


@pytest.fixture
def sched64():
    return build_schedule("linear_beta", 64)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from _report import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(LINES):
            terminalreporter.write_line(line)
