import json
from pathlib import Path

import pytest

from gmctorus.grid import GridSpec
from gmctorus.kernel import build_profile_phi, build_profile_q, get_kernel

FIXTURES = Path(__file__).parent / "fixtures"

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def oracles():
    return json.loads((FIXTURES / "oracles.json").read_text())


@pytest.fixture(scope="session")
def replay():
    return json.loads((FIXTURES / "replay.json").read_text())


@pytest.fixture(scope="session")
def phi1():
    return build_profile_phi(1)


@pytest.fixture(scope="session")
def q1():
    return build_profile_q(1)


@pytest.fixture(scope="session")
def grid1():
    return GridSpec(1, 4096)


@pytest.fixture(scope="session")
def kernels1(grid1):
    """Levels 1..10 on the d=1, M=4096 grid."""
    return [get_kernel(j, grid1) for j in range(1, 11)]


@pytest.fixture(scope="session")
def grid2():
    return GridSpec(2, 512)


@pytest.fixture(scope="session")
def kernels2(grid2):
    return [get_kernel(j, grid2) for j in range(1, 7)]


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
