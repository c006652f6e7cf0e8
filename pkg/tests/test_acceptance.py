"""The acceptance suite: every quantitative criterion at its pinned
tolerance, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
complete.  The shared context (slice families, rays, leaves) is built
lazily and reused across criteria; the full run takes several minutes.
"""

import pytest

from pshlab.acceptance import CRITERIA, AcceptanceContext


@pytest.fixture(scope="module")
def ctx():
    return AcceptanceContext(quick=False)


@pytest.mark.parametrize("criterion", CRITERIA,
                         ids=[f.__name__ for f in CRITERIA])
def test_criterion(ctx, criterion):
    result = criterion(ctx)
    print()
    print(result.line())
    assert result.passed, result.line()
