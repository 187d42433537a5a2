"""The thirteen acceptance criteria at their stated tolerances.

Each test prints a PASS/FAIL line; the full table is repeated in the
terminal summary.
"""
import pytest

from meanfield.acceptance import CRITERIA, run

from conftest import VERDICTS


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    v = run(number)
    VERDICTS.append(v)
    with capsys.disabled():
        print("\n" + v.line())
    assert v.passed, v.detail
