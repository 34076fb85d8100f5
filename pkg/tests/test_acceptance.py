"""Acceptance gate: one PASS/FAIL line per criterion.

Every line is printed as the test runs and collected again in the terminal
summary, so `pytest -v` shows the whole table. Criteria 7-10 are expected to
fail; see the README.
"""
import pytest

from ovallab import selftest

RESULTS = []


def report(result):
    RESULTS.append(result)
    print(result.line())
    assert result.passed, result.line()


@pytest.mark.parametrize("fn", selftest.QUICK, ids=lambda f: f.__name__)
def test_quick_criteria(fn):
    report(fn())


def test_criterion_12_poincare_suites():
    report(selftest.criterion_12(seed=0))


def test_criterion_13_symmetry_and_gauge():
    report(selftest.criterion_13(seed=0))


@pytest.mark.slow
@pytest.mark.parametrize("number", [7, 8, 9, 10, 11])
def test_flow_criteria(flow_runs, number):
    report(getattr(selftest, f"criterion_{number}")(flow_runs))


@pytest.mark.slow
def test_criterion_14_cross_validation():
    report(selftest.criterion_14())
