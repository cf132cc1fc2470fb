import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from allocmoe.alloc_l import (
    allocation_objective,
    brute_force_allocation,
    dp_complexity_estimate,
    optimal_allocation,
)
from allocmoe.budget import BudgetSpec, validate_allocation
from allocmoe.errors import InfeasibleBudgetError, InstanceTooLargeError, InvalidInputError
from allocmoe.sensitivity import SensitivityMatrix, normalize_rows


def random_instance(rng, max_L=6, max_k=4, integer=False):
    L = int(rng.integers(1, max_L + 1))
    K = int(rng.integers(1, max_k + 1))
    B = int(rng.integers(L, L * K + 1))
    if integer:
        S = rng.integers(0, 6, size=(L, K)).astype(float)
    else:
        S = rng.uniform(0.1, 10.0, size=(L, K))
    return S, BudgetSpec(L, K, B)


def test_full_budget_decreasing_rows():
    S = -np.sort(-np.random.default_rng(0).uniform(1, 5, (5, 4)), axis=1)
    alloc, _ = optimal_allocation(S, BudgetSpec(5, 4, 20))
    assert alloc.per_layer == (4,) * 5


def test_two_layer_example():
    # enumerating [1,1]=8, [1,2]=5, [2,1]=6 (and [2,2] over budget)
    alloc, obj = optimal_allocation([[3, 1], [5, 2]], BudgetSpec(2, 2, 3))
    assert alloc.per_layer == (1, 2)
    assert obj == 5.0
    assert brute_force_allocation([[3, 1], [5, 2]], BudgetSpec(2, 2, 3)) == (alloc, 5.0)


def test_single_layer():
    S = [[4.0, 1.0, 2.0, 0.5]]
    assert brute_force_allocation(S, BudgetSpec(1, 4, 3))[0].per_layer == (2,)
    assert optimal_allocation(S, BudgetSpec(1, 4, 3))[0].per_layer == (2,)
    assert optimal_allocation(S, BudgetSpec(1, 4, 4))[0].per_layer == (4,)


def test_matches_brute_force_random():
    rng = np.random.default_rng(42)
    for _ in range(400):
        S, spec = random_instance(rng)
        a, obj = optimal_allocation(S, spec)
        b, ref = brute_force_allocation(S, spec)
        assert obj == ref
        assert allocation_objective(S, a) == obj
        assert validate_allocation(a, spec) == []


def test_tie_breaking_matches_brute_force_on_integer_costs():
    # small integer costs make ties common and sums exact
    rng = np.random.default_rng(7)
    for _ in range(400):
        S, spec = random_instance(rng, integer=True)
        assert optimal_allocation(S, spec) == brute_force_allocation(S, spec)


def test_tie_prefers_smaller_budget_then_lexicographic():
    S = [[1.0, 1.0], [1.0, 1.0]]
    alloc, _ = optimal_allocation(S, BudgetSpec(2, 2, 4))
    assert alloc.per_layer == (1, 1)
    S = [[2.0, 1.0], [2.0, 1.0]]
    alloc, _ = optimal_allocation(S, BudgetSpec(2, 2, 3))
    assert alloc.per_layer == (1, 2)


def test_monotone_relaxation():
    rng = np.random.default_rng(3)
    for _ in range(100):
        S, spec = random_instance(rng)
        objs = [optimal_allocation(S, BudgetSpec(spec.num_layers, spec.k_orig, b))[1]
                for b in range(spec.num_layers, spec.full_budget + 1)]
        assert all(x >= y for x, y in zip(objs, objs[1:]))


def test_row_shift_argmin_invariance():
    rng = np.random.default_rng(4)
    for _ in range(200):
        S, spec = random_instance(rng, integer=True)
        shift = rng.integers(-5, 6, size=(spec.num_layers, 1)).astype(float)
        a, obj = optimal_allocation(S, spec)
        b, obj2 = optimal_allocation(S + shift, spec)
        assert a == b
        assert obj2 == pytest.approx(obj + shift.sum())


def test_subtract_row_min_preserves_choice():
    rng = np.random.default_rng(5)
    for _ in range(200):
        S, spec = random_instance(rng)
        raw = SensitivityMatrix(np.round(S, 1))
        a, _ = optimal_allocation(raw, spec)
        b, _ = optimal_allocation(normalize_rows(raw, "subtract-row-min"), spec)
        assert brute_force_allocation(raw, spec)[0] == a
        # shifted objective compares equal on the brute-force side too
        assert allocation_objective(normalize_rows(raw), b) == pytest.approx(allocation_objective(normalize_rows(raw), a))


def test_infeasible_and_shape_errors():
    with pytest.raises(InfeasibleBudgetError):
        BudgetSpec(3, 2, 2)
    with pytest.raises(InvalidInputError):
        optimal_allocation([[1.0, 2.0]], BudgetSpec(2, 2, 3))


def test_brute_force_guard():
    S = np.ones((12, 4))
    with pytest.raises(InstanceTooLargeError):
        brute_force_allocation(S, BudgetSpec(12, 4, 20))


@pytest.mark.parametrize("L, B, K, expected", [(26, 78, 6, 12168), (1, 1, 1, 1), (16, 64, 8, 8192)])
def test_complexity_estimate(L, B, K, expected):
    assert dp_complexity_estimate(BudgetSpec(L, K, B)) == expected


def test_inner_loop_within_bound():
    rng = np.random.default_rng(6)
    for L, K, B in [(26, 6, 78), (16, 8, 64), (24, 4, 60), (3, 5, 15)]:
        S = rng.uniform(size=(L, K))
        *_, table = optimal_allocation(S, BudgetSpec(L, K, B), return_table=True)
        assert table.inner_iterations <= dp_complexity_estimate(BudgetSpec(L, K, B))


def test_table_infeasible_below_layer_count():
    S = np.random.default_rng(0).uniform(size=(4, 3))
    *_, table = optimal_allocation(S, BudgetSpec(4, 3, 9), return_table=True)
    for i in range(4):
        assert np.all(np.isinf(table.dp[i, : i + 1]))
        assert np.all(np.isfinite(table.dp[i, i + 1 : min(9, 3 * (i + 1)) + 1]))


def test_table_monotone_for_decreasing_rows():
    S = -np.sort(-np.random.default_rng(8).uniform(1, 5, (5, 4)), axis=1)
    *_, table = optimal_allocation(S, BudgetSpec(5, 4, 20), return_table=True)
    for i in range(5):
        finite = table.dp[i][np.isfinite(table.dp[i])]
        assert np.all(np.diff(finite) <= 0)


@settings(max_examples=150, deadline=None)
@given(
    st.integers(1, 4).flatmap(lambda L: st.integers(1, 4).flatmap(lambda K: st.tuples(
        st.just(L), st.just(K), st.integers(L, L * K),
        st.lists(st.lists(st.integers(0, 20), min_size=K, max_size=K), min_size=L, max_size=L),
    )))
)
def test_property_exact_and_feasible(case):
    L, K, B, rows = case
    S = np.array(rows, dtype=float)
    spec = BudgetSpec(L, K, B)
    alloc, obj = optimal_allocation(S, spec)
    assert validate_allocation(alloc, spec) == []
    assert L <= alloc.total <= B
    best = min(sum(S[i, k - 1] for i, k in enumerate(c))
               for c in itertools.product(range(1, K + 1), repeat=L) if sum(c) <= B)
    assert obj == best
