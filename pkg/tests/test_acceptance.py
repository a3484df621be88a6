"""Acceptance suite: one PASS/FAIL line per criterion at the stated tolerances.

The lines are repeated in the "acceptance criteria" section of the pytest
summary; ``-s`` shows them live as well.
"""
import pytest

from kgnf.checks import ALL_CHECKS

SLOW = {5, 6, 7, 8, 9}


@pytest.mark.parametrize("number", [
    pytest.param(n, marks=[pytest.mark.slow] if n in SLOW else [], id=f"criterion-{n}")
    for n in sorted(ALL_CHECKS)
])
def test_criterion(number, record_property):
    res = ALL_CHECKS[number]()
    line = res.line()
    print(line)
    record_property("acceptance", line)
    assert res.number == number
    assert res.passed, line


def test_every_criterion_is_wired():
    assert set(ALL_CHECKS) == set(range(1, 11))
