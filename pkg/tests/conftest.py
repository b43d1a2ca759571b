import numpy as np
import pytest

from wdrmpc.datasets import case3
from wdrmpc.uncertainty import make_rng

# acceptance lines collected during the session, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return make_rng(20240611)


@pytest.fixture(scope="session")
def net3():
    return case3()
