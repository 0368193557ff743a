import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qbraess import netmodel  # noqa: E402
from qbraess.netmodel import EdgeState  # noqa: E402

P95 = (4 * 0.95 - 1) / 3


def werner(f0=0.95):
    return EdgeState.werner((4 * f0 - 1) / 3)


@pytest.fixture
def two_path_net():
    """Square 0-1-3 / 0-2-3 with identical Werner edges: two symmetric paths."""
    edges = [(0, 1), (0, 2), (1, 3), (2, 3)]
    return netmodel.make_network(4, edges, [werner()] * 4, budget=1000)


@pytest.fixture
def braess_net():
    return netmodel.load_fixture("braess8")


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
