import pytest

from oracles import SWEEPS


@pytest.mark.parametrize("op", sorted(SWEEPS))
def test_matches_brute_force_oracle(op):
    sweep, tol = SWEEPS[op]
    worst = sweep()
    assert worst <= tol, f"{op}: worst error {worst:.3e} > {tol:.0e}"
