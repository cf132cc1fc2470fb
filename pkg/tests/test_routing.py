import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from allocmoe.errors import BudgetError, InvalidInputError
from allocmoe.routing import (
    ActivationMask,
    ToyExpertBank,
    gate_softmax,
    token_routing_entropy,
    top_k_route,
    toy_moe_forward,
)

finite_logits = arrays(
    np.float64,
    st.tuples(st.integers(1, 6), st.integers(1, 9)),
    elements=st.floats(-50, 50, allow_nan=False),
)


def test_softmax_uniform_row():
    np.testing.assert_allclose(gate_softmax([[0, 0, 0, 0]]), [[0.25] * 4], rtol=0, atol=1e-15)


def test_softmax_ln2():
    np.testing.assert_allclose(gate_softmax([[math.log(2), 0]]), [[2 / 3, 1 / 3]], rtol=1e-15)


def test_softmax_against_high_precision():
    # mpmath at 50 digits
    expected = [0.85328644775688785994, 0.019088676450727301901, 0.12762487579238483816]
    np.testing.assert_allclose(gate_softmax([[3.1, -0.7, 1.2]])[0], expected, rtol=1e-14)


def test_softmax_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        gate_softmax([[0.0, np.inf]])
    with pytest.raises(InvalidInputError):
        gate_softmax([[np.nan, 1.0]])


def test_softmax_stable_for_large_logits():
    p = gate_softmax([[1000.0, 999.0]])
    assert np.all(np.isfinite(p))
    assert p[0, 0] > p[0, 1]


@settings(max_examples=200, deadline=None)
@given(finite_logits)
def test_softmax_rows_stochastic(logits):
    p = gate_softmax(logits)
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_top_k_ties_prefer_lower_index():
    mask = top_k_route([[0.25, 0.25, 0.25, 0.25]], 2)
    assert mask.active.tolist() == [[True, True, False, False]]


def test_top_k_argmax_keeps_raw_weight():
    mask = top_k_route([[0.1, 0.6, 0.3]], 1)
    assert mask.active.tolist() == [[False, True, False]]
    assert mask.weights.tolist() == [[0.0, 0.6, 0.0]]


def test_top_k_matches_full_sort():
    rng = np.random.default_rng(3)
    probs = gate_softmax(rng.standard_normal((8, 16)))
    mask = top_k_route(probs, 4)
    for t in range(8):
        oracle = set(sorted(range(16), key=lambda e: -probs[t, e])[:4])
        assert set(np.nonzero(mask.active[t])[0].tolist()) == oracle


def test_top_k_renormalize_is_opt_in():
    probs = np.array([[0.5, 0.3, 0.2]])
    assert top_k_route(probs, 2).weights.sum() == pytest.approx(0.8)
    np.testing.assert_allclose(top_k_route(probs, 2, renormalize=True).weights, [[0.625, 0.375, 0.0]])


@pytest.mark.parametrize("k", [0, 4])
def test_top_k_out_of_range(k):
    with pytest.raises(BudgetError):
        top_k_route([[0.5, 0.3, 0.2]], k)


def test_top_k_permutation_equivariant():
    rng = np.random.default_rng(11)
    probs = gate_softmax(rng.standard_normal((12, 7)))
    perm = rng.permutation(12)
    a = top_k_route(probs, 3)
    b = top_k_route(probs[perm], 3)
    assert np.array_equal(a.active[perm], b.active)
    assert np.array_equal(a.weights[perm], b.weights)


def test_mask_invariants_enforced():
    with pytest.raises(InvalidInputError):
        ActivationMask([[True, False]], [[0.5, 0.1]])
    with pytest.raises(InvalidInputError):
        ActivationMask([[False, False]], [[0.0, 0.0]])


def test_forward_single_expert():
    bank = ToyExpertBank.from_seed(4, 5, seed=1)
    x = np.random.default_rng(0).standard_normal((2, 5))
    w = np.zeros((2, 4))
    w[0, 3] = 1.0
    w[1, 0] = 1.0
    out = toy_moe_forward(x, ActivationMask(w > 0, w), bank)
    np.testing.assert_array_equal(out[0], bank.expert(3, x[0]))


def test_forward_equal_experts_convex():
    base = ToyExpertBank.from_seed(1, 3, seed=2)
    bank = ToyExpertBank(np.repeat(base.weight, 2, axis=0), np.repeat(base.bias, 2, axis=0))
    x = np.array([[0.3, -1.0, 2.0]])
    w = np.array([[0.5, 0.5]])
    out = toy_moe_forward(x, ActivationMask(w > 0, w), bank)
    np.testing.assert_allclose(out[0], base.expert(0, x[0]), rtol=1e-15)


def test_forward_full_mask_equals_dense_mixture():
    rng = np.random.default_rng(5)
    T, N, H = 6, 5, 4
    bank = ToyExpertBank.from_seed(N, H, seed=9)
    x = rng.standard_normal((T, H))
    probs = gate_softmax(rng.standard_normal((T, N)))
    mask = top_k_route(probs, N)
    dense = np.zeros((T, H))
    for t in range(T):
        for e in range(N):
            dense[t] += probs[t, e] * (x[t] @ bank.weight[e] + bank.bias[e])
    np.testing.assert_allclose(toy_moe_forward(x, mask, bank), dense, rtol=1e-12, atol=1e-14)


def test_forward_skips_zero_weight_experts():
    bank = ToyExpertBank.from_seed(4, 3)
    x = np.ones((2, 3))
    mask = top_k_route([[0.7, 0.1, 0.1, 0.1], [0.1, 0.1, 0.1, 0.7]], 1)
    trace = []
    toy_moe_forward(x, mask, bank, trace=trace)
    assert trace == [(0, 0), (1, 3)]


def test_forward_dimension_mismatch():
    bank = ToyExpertBank.from_seed(3, 4)
    mask = top_k_route([[0.5, 0.3, 0.2]], 1)
    with pytest.raises(InvalidInputError):
        toy_moe_forward(np.ones((1, 5)), mask, bank)
    with pytest.raises(InvalidInputError):
        toy_moe_forward(np.ones((2, 4)), mask, bank)


def test_bank_deterministic():
    a, b = ToyExpertBank.from_seed(3, 4, seed=7), ToyExpertBank.from_seed(3, 4, seed=7)
    assert np.array_equal(a.weight, b.weight) and np.array_equal(a.bias, b.bias)


def test_entropy_values():
    h = token_routing_entropy([[0.25] * 4, [1.0, 0.0, 0.0, 0.0]])
    assert h[0] == pytest.approx(math.log(4), abs=1e-15)
    assert h[1] == 0.0
    # 1.5 ln 2, evaluated with mpmath
    assert token_routing_entropy([[0.5, 0.25, 0.25]])[0] == pytest.approx(1.0397207708399179641, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(finite_logits)
def test_entropy_bounds(logits):
    p = gate_softmax(logits)
    h = token_routing_entropy(p)
    assert np.all(h >= 0)
    assert np.all(h <= math.log(p.shape[1]) + 1e-12)
