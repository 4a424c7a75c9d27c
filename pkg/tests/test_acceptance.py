"""The ten acceptance criteria at their stated tolerances and budgets.

Each test prints one line "criterion N [PASS|FAIL] ..."; the lines are
repeated in the terminal summary.
"""

import pytest

from renorm_lab import acceptance

LINES = []


@pytest.mark.acceptance
@pytest.mark.parametrize("number", range(1, 11))
def test_criterion(number, capsys):
    res = acceptance.CRITERIA[number - 1](quick=False)
    LINES.append(res.line())
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, res.details
