"""Token-level redistribution of a layer's activation budget.

Within one layer the budget is ``round(T * K_l)`` activation slots shared by
all ``T`` tokens. Every token keeps its ``k_base`` best experts; the remaining
slots go to the globally highest scores among each token's candidates ranked
``k_base + 1 .. k_orig``. Tokens with flat routing distributions therefore
receive more experts than confident ones.

Why greedy is exact: the problem is to maximize total retained score subject
to a per-token floor and a single global cardinality cap. The floor entries
are forced and are each token's best, and beyond them any set of extra
entries is feasible as long as its size fits the cap, so the optimum takes
the largest remaining scores. Within a token the candidates are ranked by
score, so the selection is always a per-token prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .budget import LayerTokenBudget
from .errors import BudgetError, InfeasibleBudgetError, InstanceTooLargeError, InvalidInputError
from .routing import ActivationMask, check_probs, rank_experts

DEFAULT_K_BASE = 1
ENUMERATION_LIMIT = 24  # max T * k_orig for the exhaustive oracle


@dataclass(frozen=True, eq=False)
class RedistributionPlan:
    mask: ActivationMask
    slots_used: int
    k_base: int
    total_slots: int

    @property
    def total_weight(self) -> float:
        return retained_weight(self.mask)


def retained_weight(mask: ActivationMask) -> float:
    """Correctly rounded sum of the retained weights."""
    return math.fsum(mask.weights[mask.active].tolist())


def candidate_set(probs, k_orig: int) -> list[tuple[int, int, float]]:
    """Each token's ``k_orig`` best ``(token, expert, score)`` triples, best first.

    Equal scores are ordered by expert index. Passing ``k_orig = K_l`` gives
    the narrower candidate pool of exactly ``T * K_l`` pairs.
    """
    probs = check_probs(probs)
    if not 1 <= k_orig <= probs.shape[1]:
        raise BudgetError(f"k_orig={k_orig} outside [1, {probs.shape[1]}]")
    order = rank_experts(probs)[:, :k_orig]
    return [
        (t, int(e), float(probs[t, e]))
        for t in range(probs.shape[0])
        for e in order[t]
    ]


def _check_budget(probs: np.ndarray, budget: LayerTokenBudget, k_orig: int) -> int:
    T, N = probs.shape
    if budget.token_count != T:
        raise InvalidInputError(f"budget is for {budget.token_count} tokens, scores have {T}")
    if not 1 <= k_orig <= N:
        raise BudgetError(f"k_orig={k_orig} outside [1, {N}]")
    if budget.avg_per_token > k_orig:
        raise BudgetError(f"layer budget {budget.avg_per_token} exceeds k_orig={k_orig}")
    if budget.k_base > budget.avg_per_token:
        raise InfeasibleBudgetError(f"k_base={budget.k_base} exceeds layer budget {budget.avg_per_token}")
    floor = max(budget.k_base, 1)
    slots = budget.total_slots
    if slots < T * floor:
        raise InfeasibleBudgetError(f"{slots} slots cannot give {T} tokens {floor} expert(s) each")
    return slots


def redistribute(probs, budget: LayerTokenBudget, k_orig: int) -> RedistributionPlan:
    """Assign ``budget.total_slots`` activations across the layer's tokens."""
    probs = check_probs(probs)
    slots = _check_budget(probs, budget, k_orig)
    T, N = probs.shape
    k_base = budget.k_base

    ranked = rank_experts(probs)[:, :k_orig]  # (T, k_orig)
    ranked_scores = np.take_along_axis(probs, ranked, axis=1)

    selected = np.zeros((T, k_orig), dtype=bool)  # indexed by (token, rank)
    selected[:, :k_base] = True

    pool_t, pool_r = np.meshgrid(np.arange(T), np.arange(k_base, k_orig), indexing="ij")
    pool_t, pool_r = pool_t.ravel(), pool_r.ravel()
    pool_e = ranked[pool_t, pool_r]
    pool_s = ranked_scores[pool_t, pool_r]
    extra = min(slots - T * k_base, pool_t.size)
    # lexsort: last key is primary -> descending score, then token, then expert
    order = np.lexsort((pool_e, pool_t, -pool_s))[:extra]
    selected[pool_t[order], pool_r[order]] = True

    if k_base == 0:
        _refill_empty_tokens(selected, pool_t[order], pool_r[order])

    active = np.zeros((T, N), dtype=bool)
    rows = np.nonzero(selected)
    active[rows[0], ranked[rows]] = True
    mask = ActivationMask(active, np.where(active, probs, 0.0))
    return RedistributionPlan(mask, int(active.sum()), k_base, slots)


def _refill_empty_tokens(selected: np.ndarray, sel_t: np.ndarray, sel_r: np.ndarray) -> None:
    # With no base floor a token can end up with nothing. Give it back its
    # top-1 expert and pay for it with the globally smallest selected entry
    # whose token keeps at least one other expert.
    counts = selected.sum(axis=1)
    empty = np.nonzero(counts == 0)[0]
    if empty.size == 0:
        return
    victims = list(zip(sel_t.tolist(), sel_r.tolist()))  # descending by score
    for t in empty.tolist():
        while True:
            vt, vr = victims.pop()
            if counts[vt] >= 2:
                break
        selected[vt, vr] = False
        counts[vt] -= 1
        selected[t, 0] = True
        counts[t] = 1


def brute_force_redistribute(probs, budget: LayerTokenBudget, k_orig: int):
    """Exhaustive 0/1 search over each token's top-``k_orig`` candidates.

    Feasible selections use at most ``total_slots`` entries and give every
    token at least ``max(k_base, 1)``. Returns ``(best_weight, mask)``; ties in
    weight go to the selection with the smallest bit pattern.
    """
    probs = check_probs(probs)
    slots = _check_budget(probs, budget, k_orig)
    T, N = probs.shape
    n = T * k_orig
    if n > ENUMERATION_LIMIT:
        raise InstanceTooLargeError(f"T * k_orig = {n} exceeds {ENUMERATION_LIMIT}")
    floor = max(budget.k_base, 1)

    # candidates from a plain Python sort, independent of rank_experts
    pairs = []
    for t in range(T):
        row = sorted(range(N), key=lambda e: (-probs[t, e], e))[:k_orig]
        pairs.extend((t, e) for e in row)
    w = np.array([probs[t, e] for t, e in pairs])
    shifts = np.arange(n, dtype=np.int64)

    best_val, best_code = -math.inf, None
    chunk = 1 << 16
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        bits = ((codes[:, None] >> shifts) & 1).astype(bool)
        per_token = bits.reshape(-1, T, k_orig).sum(axis=2)
        ok = (bits.sum(axis=1) <= slots) & np.all(per_token >= floor, axis=1)
        if not ok.any():
            continue
        approx = bits[ok] @ w
        # screen in float, then settle near-ties with exact summation
        near = np.nonzero(approx >= approx.max() - 1e-12)[0]
        for code in codes[ok][near].tolist():
            val = math.fsum(w[j] for j in range(n) if code >> j & 1)
            if val > best_val:
                best_val, best_code = val, code
    if best_code is None:
        raise InfeasibleBudgetError("no feasible selection")

    active = np.zeros((T, N), dtype=bool)
    for j, (t, e) in enumerate(pairs):
        if best_code >> j & 1:
            active[t, e] = True
    return best_val, ActivationMask(active, np.where(active, probs, 0.0))
