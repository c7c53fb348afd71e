import numpy as np
import pytest

from oracles import (grid_oracle_single, lp_oracle_single, straight_line_dispatch,
                     straight_line_mileage, vertex_oracle)

EXAMPLE = [(30.0, 10.0), (35.0, 4.0)]


def test_lp_oracle_examples():
    assert lp_oracle_single(EXAMPLE, 2, 2).objective == pytest.approx(51)
    zero = lp_oracle_single(EXAMPLE, 0, 2)
    assert zero.objective == pytest.approx(0) and np.allclose(zero.x, 0) and np.allclose(zero.y, 0)
    sat = lp_oracle_single(EXAMPLE, 4, 2)
    assert sat.objective == pytest.approx(2 * (30 + 35))


def test_lp_oracle_flags_infeasible():
    assert not lp_oracle_single(EXAMPLE, 5, 2).feasible


def test_grid_oracle_single_slot():
    res = grid_oracle_single([(30.0, 10.0)], 1, 2)
    assert res.x.tolist() == [1.0] and res.y.tolist() == [1.0]


def test_grid_oracle_example_within_resolution():
    res = grid_oracle_single(EXAMPLE, 2, 2, 201)
    assert abs(res.objective - 51) <= 2 * (35 + 4) / 200


def test_grid_oracle_pure_arbitrage():
    res = grid_oracle_single([(40.0, 0.0), (20.0, 0.0), (30.0, 0.0)], 3, 2, 41)
    assert res.x.tolist() == pytest.approx([0.0, 2.0, 1.0])


def test_grid_oracle_limits():
    with pytest.raises(ValueError):
        grid_oracle_single([(1, 1)] * 4, 1, 2)


def test_vertex_oracle_simple():
    best, x = vertex_oracle([1.0, 1.0], [], [], [[-1.0, -1.0]], [-1.0], [0, 0], [5, 5])
    assert best == pytest.approx(1.0)


def test_straight_line_helpers():
    assert straight_line_mileage([0, 1, -1, 0]) == 4
    e, p = straight_line_dispatch([1.0], [0.5], [1.0] * 4, [10.0], [2.0])
    assert e[0] == pytest.approx(0.5)
