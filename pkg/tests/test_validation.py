import pytest

from wdrmpc.validation import CHECKS, random_lp, run_checks
from wdrmpc.lp import solve
from wdrmpc.uncertainty import make_rng


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_every_check_passes(seed):
    results = run_checks(seed)
    assert len(results) == len(CHECKS)
    for name, ok, detail in results:
        assert ok, f"{name}: {detail}"


def test_random_lp_is_feasible_and_bounded():
    rng = make_rng(5)
    for _ in range(10):
        assert solve(random_lp(rng, 6, 9)).ok
