import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import _tableau
import helpers as H
from gasexpand.lp import LinearProgram, LPWorkspace, lp_solve


def test_single_lower_bound():
    lp = LinearProgram([1.0], [-math.inf], [math.inf])
    lp.add_row([0], [1.0], 3.0, math.inf)
    res = lp_solve(lp)
    assert res.status == "optimal"
    assert res.x[0] == pytest.approx(3.0)


def test_maximise_sum_in_unit_box():
    lp = LinearProgram([-1.0, -1.0], [0.0, 0.0], [1.0, 1.0])
    lp.add_row([0, 1], [1.0, 1.0], -math.inf, 1.0)
    res = lp_solve(lp)
    assert res.status == "optimal"
    assert -res.objective == pytest.approx(1.0)


def test_infeasible_and_unbounded():
    lp = LinearProgram([1.0], [0.0], [1.0])
    lp.add_row([0], [1.0], 2.0, math.inf)
    assert lp_solve(lp).status == "infeasible"
    lp = LinearProgram([-1.0], [0.0], [math.inf])
    assert lp_solve(lp).status == "unbounded"


def test_column_scaling_is_transparent():
    lp = LinearProgram([1.0, 2.0], [0.0, 0.0], [1e12, 1e12], col_scale=[1e11, 1.0])
    lp.add_row([0, 1], [1.0, 1e11], 3e11, math.inf)
    res = lp_solve(lp)
    # x1 = 3 (cost 6) beats x0 = 3e11
    assert res.objective == pytest.approx(6.0, rel=1e-9)
    assert res.x[1] == pytest.approx(3.0, rel=1e-9)


def test_workspace_bound_changes_and_rows():
    lp = LinearProgram([1.0, 1.0], [0.0, 0.0], [10.0, 10.0])
    lp.add_row([0, 1], [1.0, 1.0], 4.0, math.inf)
    ws = LPWorkspace(lp)
    assert ws.solve().objective == pytest.approx(4.0)
    ws.set_bounds([0], [3.0], [3.0])
    ws.add_row([1], [1.0], 2.0, math.inf)
    res = ws.solve()
    assert res.objective == pytest.approx(5.0)
    assert ws.num_rows == 2


def test_bad_inputs_rejected():
    with pytest.raises(ValueError):
        LinearProgram([1.0], [0.0, 0.0], [1.0])
    with pytest.raises(ValueError):
        LinearProgram([1.0], [0.0], [1.0], col_scale=[0.0])


def test_deterministic():
    rng = np.random.default_rng(3)
    data = H.random_lp(rng)
    a, b = lp_solve(H.lp_of(*data)), lp_solve(H.lp_of(*data))
    assert a.objective == b.objective and np.array_equal(a.x, b.x)


def test_oracle_small_cases():
    # min -x - y  s.t. x + 2y <= 4, 3x + y <= 6, x, y in [0, 5]
    status, obj = _tableau.solve([-1, -1], [[1, 2], [3, 1]], [-math.inf, -math.inf], [4, 6], [0, 0], [5, 5])
    assert status == "optimal" and obj == pytest.approx(-2.8)
    status, _ = _tableau.solve([1], [[1]], [2], [math.inf], [0], [1])
    assert status == "infeasible"


@given(st.integers(0, 2**32 - 1))
def test_agrees_with_tableau_oracle(seed):
    rng = np.random.default_rng(seed)
    data = H.random_lp(rng, int(rng.integers(2, 9)), int(rng.integers(1, 9)))
    res = lp_solve(H.lp_of(*data))
    status, obj = _tableau.solve(*data)
    assert res.status == status
    if status == "optimal":
        assert res.objective == pytest.approx(obj, abs=1e-6)
        cost, a, lo_r, hi_r, lo_c, hi_c = data
        act = a @ res.x
        assert np.all(act >= lo_r - 1e-6) and np.all(act <= hi_r + 1e-6)
        assert np.all(res.x >= lo_c - 1e-9) and np.all(res.x <= hi_c + 1e-9)
