"""End-to-end acceptance criteria at their stated tolerances.

Each criterion prints one PASS/FAIL line; the lines are repeated in the
terminal summary. Simulation runs are shared through a session cache.
"""

import pytest

from conftest import ACCEPTANCE_LINES
from noisecoord import acceptance


@pytest.fixture(scope="session")
def run_cache():
    return acceptance.RunCache(acceptance.N_SEEDS)


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA))
def test_criterion(number, run_cache):
    res = acceptance.CRITERIA[number](run_cache)
    line = res.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert res.passed, line
