"""Comparison allocators.

Layer level: uniform, ascending and descending schedules. Token level: Top-P
routing and relative-threshold expert skipping, each with a bisection
calibration that hits a target average activation count from below.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .budget import AllocationVector, BudgetSpec, round_half_even
from .errors import BudgetError, InfeasibleBudgetError
from .routing import ActivationMask, check_probs, rank_experts

THRESHOLD_RESOLUTION = 1e-6


def uniform_allocation(spec: BudgetSpec, spread_remainder: bool = False) -> AllocationVector:
    L, B = spec.num_layers, spec.global_budget
    q, r = divmod(B, L)
    if r and not spread_remainder:
        raise BudgetError(f"budget {B} is not divisible by {L} layers (use spread_remainder)")
    return AllocationVector(tuple([q + 1] * r + [q] * (L - r)))


def _can_increment(a: list[int], i: int, k_max: int) -> bool:
    v = a[i] + 1
    if v > k_max:
        return False
    if i > 0 and v - a[i - 1] > 1:
        return False
    return i == len(a) - 1 or v <= a[i + 1]


def _can_decrement(a: list[int], i: int, k_min: int) -> bool:
    v = a[i] - 1
    if v < k_min:
        return False
    if i > 0 and v < a[i - 1]:
        return False
    return i == len(a) - 1 or a[i + 1] - v <= 1


def ascending_allocation(spec: BudgetSpec, k_min: int = 1, k_max: int | None = None) -> AllocationVector:
    """Non-decreasing schedule with unit steps that spends exactly ``B``.

    Starts from the rounded linear ramp ``k_min -> k_max``, repairs it with a
    forward and a backward pass so that adjacent layers differ by at most one,
    then nudges single layers (increments scanning left to right, decrements
    scanning right to left) until the sum equals the budget.
    """
    L, B = spec.num_layers, spec.global_budget
    k_max = spec.k_orig if k_max is None else k_max
    if not 1 <= k_min <= k_max <= spec.k_orig:
        raise BudgetError(f"need 1 <= k_min <= k_max <= k_orig, got {k_min}, {k_max}, {spec.k_orig}")
    if not L * k_min <= B <= L * k_max:
        raise InfeasibleBudgetError(f"budget {B} outside [{L * k_min}, {L * k_max}] for these bounds")

    if L == 1:
        a = [k_min]
    else:
        a = [round_half_even(k_min + Fraction((k_max - k_min) * i, L - 1)) for i in range(L)]
    for i in range(1, L):
        a[i] = min(max(a[i], a[i - 1]), a[i - 1] + 1)
    for i in range(L - 2, -1, -1):
        a[i] = max(min(a[i], a[i + 1]), a[i + 1] - 1)

    total = sum(a)
    while total < B:
        i = next(i for i in range(L) if _can_increment(a, i, k_max))
        a[i] += 1
        total += 1
    while total > B:
        i = next(i for i in range(L - 1, -1, -1) if _can_decrement(a, i, k_min))
        a[i] -= 1
        total -= 1
    return AllocationVector(tuple(a))


def descending_allocation(spec: BudgetSpec, k_min: int = 1, k_max: int | None = None) -> AllocationVector:
    return AllocationVector(tuple(reversed(ascending_allocation(spec, k_min, k_max).per_layer)))


def _mask_from_counts(probs: np.ndarray, counts: np.ndarray) -> ActivationMask:
    ranked = rank_experts(probs)
    keep_rank = np.arange(probs.shape[1])[None, :] < counts[:, None]
    active = np.zeros(probs.shape, dtype=bool)
    np.put_along_axis(active, ranked, keep_rank, axis=1)
    return ActivationMask(active, np.where(active, probs, 0.0))


def top_p_counts(probs, p: float) -> np.ndarray:
    probs = check_probs(probs)
    if not 0 < p <= 1:
        raise BudgetError(f"P={p} outside (0, 1]")
    sorted_scores = np.take_along_axis(probs, rank_experts(probs), axis=1)
    csum = np.cumsum(sorted_scores, axis=1)
    reached = csum >= p
    n = probs.shape[1]
    counts = np.where(reached.any(axis=1), reached.argmax(axis=1) + 1, n)
    # rounding can leave the full prefix just short of P = 1; never add zero scores
    nonzero = np.maximum((probs > 0).sum(axis=1), 1)
    return np.minimum(counts, nonzero)


def top_p_route(probs, p: float) -> ActivationMask:
    """Per token, the shortest best-first prefix whose scores sum to at least ``p``."""
    probs = check_probs(probs)
    return _mask_from_counts(probs, top_p_counts(probs, p))


def naee_counts(probs, k_orig: int, beta: float) -> np.ndarray:
    probs = check_probs(probs)
    if not 0 <= beta <= 1:
        raise BudgetError(f"beta={beta} outside [0, 1]")
    if not 1 <= k_orig <= probs.shape[1]:
        raise BudgetError(f"k_orig={k_orig} outside [1, {probs.shape[1]}]")
    sorted_scores = np.take_along_axis(probs, rank_experts(probs), axis=1)[:, :k_orig]
    keep = sorted_scores >= beta * sorted_scores[:, :1]
    keep[:, 0] = True
    # scores are sorted, so the kept ranks form a prefix
    return keep.sum(axis=1)


def naee_route(probs, k_orig: int, beta: float) -> ActivationMask:
    """Top-``k_orig`` routing that drops rank ``j >= 2`` when its score is below ``beta`` times the top score."""
    probs = check_probs(probs)
    return _mask_from_counts(probs, naee_counts(probs, k_orig, beta))


@dataclass(frozen=True)
class CalibrationResult:
    threshold: float
    achieved_avg: float
    target_avg: float

    @property
    def gap(self) -> float:
        return self.target_avg - self.achieved_avg

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "achieved_avg": self.achieved_avg, "target_avg": self.target_avg}


def _bisect(avg: Callable[[float], float], target: float, lo: float, hi: float, increasing: bool) -> float:
    # invariant: the "good" end satisfies avg <= target, the other end does not
    good, bad = (lo, hi) if increasing else (hi, lo)
    while abs(bad - good) > THRESHOLD_RESOLUTION:
        mid = 0.5 * (good + bad)
        if avg(mid) <= target:
            good = mid
        else:
            bad = mid
    return good


def calibrate_top_p(probs, target_avg: float) -> CalibrationResult:
    """Largest Top-P threshold whose mean activation count does not exceed ``target_avg``.

    The mean count is a non-decreasing step function of P, so the result is
    the closest attainable value from below.
    """
    probs = check_probs(probs)
    n = probs.shape[1]
    if not 1 <= target_avg <= n:
        raise BudgetError(f"target {target_avg} outside [1, {n}]")

    def avg(p):
        return float(top_p_counts(probs, p).mean())

    if avg(1.0) <= target_avg:
        p = 1.0
    else:
        # every token activates exactly one expert as P -> 0
        p = max(_bisect(avg, target_avg, 0.0, 1.0, increasing=True), THRESHOLD_RESOLUTION)
        if avg(p) > target_avg:
            raise InfeasibleBudgetError(f"target {target_avg} unreachable with Top-P")
    return CalibrationResult(p, avg(p), float(target_avg))


def calibrate_naee(probs, k_orig: int, target_avg: float) -> CalibrationResult:
    """Smallest skipping threshold beta whose mean activation count does not exceed ``target_avg``."""
    probs = check_probs(probs)
    if not 1 <= target_avg <= k_orig:
        raise BudgetError(f"target {target_avg} outside [1, {k_orig}]")

    def avg(beta):
        return float(naee_counts(probs, k_orig, beta).mean())

    if avg(0.0) <= target_avg:
        beta = 0.0
    elif avg(1.0) > target_avg:
        raise InfeasibleBudgetError(
            f"target {target_avg} unreachable: ties with the top score keep {avg(1.0)} experts at beta=1"
        )
    else:
        beta = _bisect(avg, target_avg, 0.0, 1.0, increasing=False)
    return CalibrationResult(beta, avg(beta), float(target_avg))


def calibrate_layers(kind: str, probs_by_layer, target_avg: float, *, k_orig: int | None = None,
                     per_layer: bool = False) -> list[CalibrationResult]:
    """Calibrate over several layers.

    By default one threshold is fit on the pooled tokens of every layer and
    returned once per layer; ``per_layer=True`` fits each layer separately.
    """
    if kind == "top_p":
        fit = calibrate_top_p
    elif kind == "naee":
        if k_orig is None:
            raise BudgetError("naee calibration needs k_orig")
        def fit(probs, target):
            return calibrate_naee(probs, k_orig, target)
    else:
        raise ValueError(f"unknown calibration kind {kind!r}")
    layers = [check_probs(p) for p in probs_by_layer]
    if per_layer:
        return [fit(p, target_avg) for p in layers]
    pooled = fit(np.vstack(layers), target_avg)
    return [pooled] * len(layers)
