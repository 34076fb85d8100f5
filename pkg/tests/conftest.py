import os

import pytest

from ovallab.selftest import FlowRuns

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")
REPO = os.path.dirname(os.path.dirname(__file__))


@pytest.fixture(scope="session")
def flow_runs():
    """Radial runs from tau = -100 to -25 for (n, k) = (2, 1) and (3, 2), shared across modules."""
    return FlowRuns()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for r in sorted(RESULTS, key=lambda r: r.number):
            terminalreporter.write_line(r.line())
