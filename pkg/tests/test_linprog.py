import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog as scipy_linprog

from pmkt.linprog import EXACT, FLOAT, INFEASIBLE, OPTIMAL, UNBOUNDED, LpProblem, solve_lp


def vertex_oracle(c, A, b):
    """max c.x over {x >= 0, Ax <= b} by enumerating basic feasible solutions."""
    m, n = A.shape
    full = np.vstack([A, -np.eye(n)])
    rhs = np.concatenate([b, np.zeros(n)])
    best = None
    for idx in itertools.combinations(range(m + n), n):
        sub = full[list(idx)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, rhs[list(idx)])
        if np.all(full @ x <= rhs + 1e-9):
            val = float(c @ x)
            best = val if best is None else max(best, val)
    return best


def test_box_maximum():
    sol = solve_lp(LpProblem([1, 1], [[1, 0], [0, 1]], ["<=", "<="], [1, 1], maximize=True), EXACT)
    assert sol.status == OPTIMAL
    assert sol.objective == 2
    assert sol.x == (1, 1)


def test_empty_feasible_set():
    sol = solve_lp(LpProblem([1], [[1]], ["<="], [-1], maximize=True), EXACT)
    assert sol.status == INFEASIBLE


def test_unbounded():
    sol = solve_lp(LpProblem([1, 0], [[0, 1]], ["<="], [1], maximize=True), FLOAT)
    assert sol.status == UNBOUNDED


def test_equality_and_free_variable():
    # min x0 subject to x0 - x1 == -2, x1 <= 1, x0 free
    sol = solve_lp(LpProblem([1, 0], [[1, -1], [0, 1]], ["==", "<="], [-2, 1], lower=[None, 0]), EXACT)
    assert sol.objective == -2
    assert sol.x == (-2, 0)


def test_upper_bounds_and_ge_rows():
    sol = solve_lp(LpProblem([1, 1], [[1, 1]], [">="], [1], upper=[Fraction(1, 3), None]), EXACT)
    assert sol.objective == 1


@pytest.mark.parametrize("seed", range(12))
def test_random_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(seed)
    A = rng.integers(0, 6, size=(5, 8)).astype(float)
    A[:, rng.integers(8)] += 1
    b = rng.integers(1, 10, size=5).astype(float)
    c = rng.integers(-2, 6, size=8).astype(float)
    # Keep the region bounded so the oracle's maximum exists.
    A = np.vstack([A, np.ones(8)])
    b = np.append(b, 10.0)
    expected = vertex_oracle(c, A, b)
    for mode in (FLOAT, EXACT):
        rows = A.astype(int).tolist() if mode == EXACT else A.tolist()
        sol = solve_lp(LpProblem(c.astype(int).tolist(), rows, ["<="] * len(b), b.astype(int).tolist(), maximize=True), mode)
        assert sol.status == OPTIMAL
        assert float(sol.objective) == pytest.approx(expected, abs=1e-7)


problems = st.integers(1, 4).flatmap(
    lambda m: st.integers(1, 4).flatmap(
        lambda n: st.tuples(
            st.lists(st.lists(st.integers(0, 5), min_size=n, max_size=n), min_size=m, max_size=m),
            st.lists(st.integers(0, 8), min_size=m, max_size=m),
            st.lists(st.integers(-3, 5), min_size=n, max_size=n),
        )
    )
)


@settings(max_examples=60, deadline=None)
@given(problems)
def test_weak_duality_and_scipy_agreement(data):
    A, b, c = data
    n = len(c)
    # A row of ones keeps every problem bounded.
    A = A + [[1] * n]
    b = b + [6]
    sol = solve_lp(LpProblem(c, A, ["<="] * len(b), b, maximize=True), FLOAT)
    assert sol.status == OPTIMAL
    y = np.array(sol.duals, dtype=float)
    At = np.array(A, dtype=float).T
    assert np.all(y >= -1e-8)
    assert np.all(At @ y >= np.array(c) - 1e-8)
    assert float(np.array(b) @ y) >= sol.objective - 1e-8
    ref = scipy_linprog(-np.array(c, dtype=float), A_ub=A, b_ub=b, bounds=[(0, None)] * n, method="highs")
    assert sol.objective == pytest.approx(-ref.fun, abs=1e-7)


@settings(max_examples=40, deadline=None)
@given(problems, st.integers(0, 3), st.fractions(min_value=Fraction(1, 7), max_value=7))
def test_exact_row_scaling_leaves_primal_unchanged(data, row, factor):
    A, b, c = data
    n = len(c)
    A = A + [[1] * n]
    b = b + [6]
    row %= len(b)
    base = solve_lp(LpProblem(c, A, ["<="] * len(b), b, maximize=True), EXACT)
    A2 = [list(r) for r in A]
    A2[row] = [v * factor for v in A2[row]]
    b2 = list(b)
    b2[row] = b2[row] * factor
    scaled = solve_lp(LpProblem(c, A2, ["<="] * len(b), b2, maximize=True), EXACT)
    assert scaled.x == base.x
    assert scaled.objective == base.objective


def test_deterministic_repeats():
    rng = np.random.default_rng(3)
    A = rng.uniform(0, 1, size=(6, 9)).tolist()
    p = LpProblem(rng.uniform(-1, 1, size=9).tolist(), A, ["<="] * 6, [1.0] * 6, maximize=True)
    first = solve_lp(p)
    for _ in range(3):
        again = solve_lp(p)
        assert again.x == first.x
        assert again.duals == first.duals


def test_shape_errors():
    with pytest.raises(ValueError):
        solve_lp(LpProblem([1, 1], [[1]], ["<="], [1]))
    with pytest.raises(ValueError):
        solve_lp(LpProblem([1], [[1]], ["<"], [1]))
