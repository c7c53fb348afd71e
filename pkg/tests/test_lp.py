import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from evmpc.errors import InvalidProblemError
from evmpc.lp import LpBuilder, LpProblem, LpStatus, solve
from oracles import vertex_oracle


def test_bound_active_minimum():
    b = LpBuilder()
    b.add_var("x", 1.0, np.inf, cost=1.0)
    sol = solve(b.build())
    assert sol.status is LpStatus.OPTIMAL
    assert sol.x[0] == pytest.approx(1.0) and sol.objective == pytest.approx(1.0)


def test_contradictory_rows_infeasible():
    b = LpBuilder()
    x = b.add_var("x", -np.inf, np.inf, cost=1.0)
    b.add_ge([x], [1.0], 1.0)
    b.add_le([x], [1.0], 0.0)
    sol = solve(b.build())
    assert sol.status is LpStatus.INFEASIBLE and not sol.ok and sol.x is None


def test_unbounded():
    b = LpBuilder()
    b.add_var("x", -np.inf, np.inf, cost=1.0)
    assert solve(b.build()).status is LpStatus.UNBOUNDED


def test_single_ev_example():
    b = LpBuilder()
    x = b.add_vars(2, "x", 0.0, 2.0, cost=[30, 35])
    y = b.add_vars(2, "y", 0.0, np.inf, cost=[-10, -4])
    b.add_eq(x, 1.0, 2.0)
    b.add_le_rows(np.column_stack([y, x]), [1.0, -1.0], 0.0)
    b.add_le_rows(np.column_stack([y, x]), [1.0, 1.0], 2.0)
    sol = solve(b.build())
    assert sol.objective == pytest.approx(51.0)


def test_validation():
    with pytest.raises(InvalidProblemError):
        LpProblem(np.ones(2), np.zeros(2), np.ones(2), None, [], sp.csr_matrix((1, 3)), [1.0])
    with pytest.raises(InvalidProblemError):
        LpProblem(np.ones(1), np.ones(1), np.zeros(1), None, [], None, [])
    with pytest.raises(InvalidProblemError):
        LpProblem(np.array([np.nan]), np.zeros(1), np.ones(1), None, [], None, [])


def test_empty_problem():
    prob = LpProblem(np.zeros(0), np.zeros(0), np.zeros(0), None, [], None, [])
    assert solve(prob).ok


def test_lp_text_dump():
    b = LpBuilder()
    x = b.add_var("x", 0, 3, cost=2.0)
    y = b.add_var("y", -np.inf, np.inf)
    b.add_le([x, y], [1, -1], 1)
    text = b.build().to_lp_text()
    assert "Minimize" in text and "c0: 1 x - 1 y <= 1" in text and "-inf <= y <= +inf" in text


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 5))
    m = int(rng.integers(1, 4))
    c = rng.normal(size=n)
    a = rng.normal(size=(m, n))
    x0 = rng.uniform(0, 1, n)
    rhs = a @ x0 + rng.uniform(0, 1, m)    # x0 is feasible
    b = LpBuilder()
    xs = b.add_vars(n, "x", 0.0, 2.0, cost=c)
    for i in range(m):
        b.add_le(xs, a[i], rhs[i])
    sol = solve(b.build())
    best, _ = vertex_oracle(c, np.zeros((0, n)), [], a, rhs, np.zeros(n), np.full(n, 2.0))
    assert sol.ok
    assert sol.objective == pytest.approx(best, abs=1e-7)
