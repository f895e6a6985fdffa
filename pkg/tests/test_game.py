import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.optimize import linprog

from ope_lab.game import (LPError, LPStatus, brute_force_value, compositions, equilibrium_residual, lp_solve,
                          solve_zero_sum)


def _vertex_oracle(c, A, b):
    """Max of c @ x over x >= 0, A x <= b by enumerating basic feasible points."""
    n = len(c)
    G = np.vstack([A, -np.eye(n)])
    h = np.concatenate([b, np.zeros(n)])
    best = -np.inf
    for rows in itertools.combinations(range(G.shape[0]), n):
        M = G[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, h[list(rows)])
        if np.all(G @ x <= h + 1e-9):
            best = max(best, float(c @ x))
    return best


def test_lp_single_variable():
    res = lp_solve([1.0], [[1.0]], [3.0])
    assert res.x[0] == pytest.approx(3.0)
    assert res.objective == pytest.approx(3.0)


def test_lp_redundant_constraint():
    res = lp_solve([1.0, 1.0], [[1, 0], [1, 0], [0, 1], [1, 1]], [1, 1, 1, 2])
    assert res.objective == pytest.approx(2.0)


def test_lp_beale_cycling_example():
    c = [0.75, -150.0, 0.02, -6.0]
    A = [[0.25, -60, -0.04, 9], [0.5, -90, -0.02, 3], [0, 0, 1, 0]]
    res = lp_solve(c, A, [0, 0, 1])
    assert res.objective == pytest.approx(0.05, abs=1e-12)


def test_lp_redundant_equalities():
    res = lp_solve([1.0, 2.0], A_eq=[[1, 1], [2, 2]], b_eq=[1, 2])
    assert res.objective == pytest.approx(2.0)


def test_lp_infeasible_and_unbounded():
    with pytest.raises(LPError) as err:
        lp_solve([1.0], [[1.0]], [-1.0])
    assert err.value.status is LPStatus.INFEASIBLE
    with pytest.raises(LPError) as err:
        lp_solve([1.0, 0.0], [[0.0, 1.0]], [1.0])
    assert err.value.status is LPStatus.UNBOUNDED


def test_lp_negative_rhs_needs_phase_one():
    # x >= 1 written as -x <= -1
    res = lp_solve([-1.0, -1.0], [[-1, 0], [0, -1]], [-1, -2])
    np.testing.assert_allclose(res.x, [1, 2])


def test_lp_twenty_random_against_vertex_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(20):
        n = int(rng.integers(1, 7))
        m = int(rng.integers(1, 5))
        A = rng.normal(size=(m, n))
        A = np.vstack([A, np.ones((1, n))])  # keeps the region bounded
        b = np.concatenate([rng.uniform(0.5, 3, m), [5.0]])
        c = rng.normal(size=n)
        res = lp_solve(c, A, b)
        assert res.objective == pytest.approx(_vertex_oracle(c, A, b), abs=1e-7)
        ref = linprog(-c, A_ub=A, b_ub=b, method="highs")
        assert res.objective == pytest.approx(-ref.fun, abs=1e-7)
        # strong duality with nonnegative multipliers
        assert np.all(res.duals_ub >= -1e-9)
        assert b @ res.duals_ub == pytest.approx(res.objective, abs=1e-7)
        assert np.all(A.T @ res.duals_ub >= c - 1e-7)


@pytest.mark.parametrize("C, p, value", [
    ([[2.0]], [1.0], 2.0),
    ([[1.0, -1.0], [-1.0, 1.0]], [0.5, 0.5], 0.0),
    ([[3.0, 1.0], [1.0, 2.0]], [1 / 3, 2 / 3], 5 / 3),
])
def test_zero_sum_hand_cases(C, p, value):
    sol = solve_zero_sum(C)
    np.testing.assert_allclose(sol.p_star, p, atol=1e-9)
    assert sol.value == pytest.approx(value, abs=1e-9)
    assert sol.residual <= 1e-9


def test_pennies_column_strategy():
    np.testing.assert_allclose(solve_zero_sum([[1.0, -1.0], [-1.0, 1.0]]).w_star, [0.5, 0.5], atol=1e-9)


def test_zero_sum_rejects_bad_payoff():
    with pytest.raises(ValueError):
        solve_zero_sum([[np.nan]])
    with pytest.raises(ValueError):
        solve_zero_sum(np.zeros((0, 2)))


def test_brute_force_cases():
    assert brute_force_value([[2.0]], 5) == 2.0
    assert brute_force_value([[1.0, -1.0], [-1.0, 1.0]], 101) == pytest.approx(0.0, abs=0.02)
    with pytest.raises(ValueError):
        brute_force_value([[1.0]], 1)
    with pytest.raises(ValueError):
        brute_force_value(np.ones((5, 2)), 10)


def test_compositions_count():
    from math import comb
    for total, parts in [(6, 1), (6, 2), (6, 3), (6, 4)]:
        c = compositions(total, parts)
        assert c.shape == (comb(total + parts - 1, parts - 1), parts)
        assert np.all(c.sum(axis=1) == total)


payoffs = st.tuples(st.integers(1, 4), st.integers(1, 4)).flatmap(
    lambda s: arrays(float, s, elements=st.floats(-5, 5, allow_subnormal=False)))


@settings(max_examples=100, deadline=None)
@given(payoffs)
def test_equilibrium_and_duality(C):
    sol = solve_zero_sum(C)
    assert abs(sol.p_star.sum() - 1) <= 1e-9 and sol.p_star.min() >= 0
    assert abs(sol.w_star.sum() - 1) <= 1e-9 and sol.w_star.min() >= 0
    assert np.all(sol.p_star @ C >= sol.value - 1e-7)
    assert sol.residual <= 1e-6
    other = solve_zero_sum(-C.T)
    assert sol.value == pytest.approx(-other.value, abs=1e-7)


@settings(max_examples=50, deadline=None)
@given(payoffs, st.integers(0, 10_000))
def test_random_strategies_do_not_beat_value(C, seed):
    z = solve_zero_sum(C).value
    P = np.random.default_rng(seed).dirichlet(np.ones(C.shape[0]), 1000)
    assert np.all((P @ C).min(axis=1) <= z + 1e-7)


# dyadic entries and shifts keep C + shift exact, so no ties are created by rounding
dyadic_payoffs = st.tuples(st.integers(1, 4), st.integers(1, 4)).flatmap(
    lambda s: arrays(float, s, elements=st.integers(-320, 320).map(lambda k: k / 64)))


@settings(max_examples=100, deadline=None)
@given(dyadic_payoffs, st.integers(-80, 80).map(lambda k: k / 8))
def test_shift_invariance(C, shift):
    a, b = solve_zero_sum(C), solve_zero_sum(C + shift)
    assert b.value == pytest.approx(a.value + shift, abs=1e-7)
    np.testing.assert_allclose(a.p_star, b.p_star, atol=1e-6)


def test_residual_function():
    C = np.array([[3.0, 1.0], [1.0, 2.0]])
    assert equilibrium_residual(C, np.array([1 / 3, 2 / 3]), np.array([1 / 3, 2 / 3]), 5 / 3) == pytest.approx(0, abs=1e-12)
    assert equilibrium_residual(C, np.array([1.0, 0.0]), np.array([0.5, 0.5]), 5 / 3) > 0
