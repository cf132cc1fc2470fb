"""Exact layer-level allocation via a grouped-knapsack dynamic program.

Each layer is a group: choosing ``k`` experts for layer ``i`` costs ``k``
budget units and incurs ``S[i, k]``. ``dp[i, b]`` is the smallest cumulative
sensitivity of layers ``0..i`` using exactly ``b`` units::

    dp[-1, 0] = 0,  dp[-1, b > 0] = inf
    dp[i, b]  = min_{1 <= k <= min(b, k_orig)} dp[i-1, b-k] + S[i, k]

The answer is the best ``dp[L-1, b]`` over ``b <= B``. Among equally good
allocations the one with the smaller total budget wins, then the
lexicographically smallest vector.

Floating-point note: rounding is monotone, so ``min(a) + s == min(a + s)``
and the table value equals the left-to-right float sum of the optimal
allocation, the same number :func:`allocation_objective` produces.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .budget import AllocationVector, BudgetSpec
from .errors import InfeasibleBudgetError, InstanceTooLargeError, InvalidInputError
from .sensitivity import SensitivityMatrix, as_matrix

BRUTE_FORCE_LIMIT = 10**7


@dataclass(frozen=True, eq=False)
class DPTable:
    dp: np.ndarray  # (L, B+1), inf where infeasible
    choice: np.ndarray  # (L, B+1), smallest argmin k, 0 where infeasible
    inner_iterations: int


def allocation_objective(S, alloc) -> float:
    """``sum_i S[i, K_i]`` accumulated left to right."""
    S = as_matrix(S)
    total = 0.0
    for i, k in enumerate(alloc):
        total += S.at(i, k)
    return total


def _check(S: SensitivityMatrix, spec: BudgetSpec):
    if S.values.shape != (spec.num_layers, spec.k_orig):
        raise InvalidInputError(
            f"sensitivity matrix is {S.values.shape}, spec expects ({spec.num_layers}, {spec.k_orig})"
        )
    if spec.global_budget < spec.num_layers:
        raise InfeasibleBudgetError(f"budget {spec.global_budget} < L={spec.num_layers}")


def build_dp_table(S, spec: BudgetSpec) -> DPTable:
    S = as_matrix(S)
    _check(S, spec)
    L, K, B = spec.num_layers, spec.k_orig, spec.global_budget
    rows = S.values.tolist()
    dp = np.full((L, B + 1), math.inf)
    choice = np.zeros((L, B + 1), dtype=np.int64)
    prev = [0.0] + [math.inf] * B
    iterations = 0
    for i in range(L):
        cur = [math.inf] * (B + 1)
        arg = [0] * (B + 1)
        row = rows[i]
        for b in range(1, B + 1):
            best, best_k = math.inf, 0
            for k in range(1, min(b, K) + 1):
                iterations += 1
                base = prev[b - k]
                if base == math.inf:
                    continue
                val = base + row[k - 1]
                if val < best:
                    best, best_k = val, k
            cur[b], arg[b] = best, best_k
        dp[i] = cur
        choice[i] = arg
        prev = cur
    return DPTable(dp, choice, iterations)


def _backtrack(S: SensitivityMatrix, table: DPTable, end_budget: int) -> tuple[int, ...]:
    # Mark every state lying on some optimal path to (L-1, end_budget), then
    # walk forward taking the smallest k that stays on a marked path. This
    # yields the lexicographically smallest optimal vector.
    dp = table.dp
    L, width = dp.shape
    K = S.k_orig
    vals = S.values
    on_path = np.zeros_like(dp, dtype=bool)
    on_path[L - 1, end_budget] = True
    for i in range(L - 1, 0, -1):
        for b in np.nonzero(on_path[i])[0]:
            for k in range(1, min(b, K) + 1):
                if dp[i - 1, b - k] + vals[i, k - 1] == dp[i, b]:
                    on_path[i - 1, b - k] = True
    out = []
    used = 0
    for i in range(L):
        prev_val = 0.0 if i == 0 else dp[i - 1, used]
        for k in range(1, K + 1):
            b = used + k
            if b < width and on_path[i, b] and prev_val + vals[i, k - 1] == dp[i, b]:
                out.append(k)
                used = b
                break
        else:  # pragma: no cover - unreachable for a consistent table
            raise RuntimeError("backtracking failed")
    return tuple(out)


def optimal_allocation(S, spec: BudgetSpec, *, return_table: bool = False):
    """Minimize ``sum_i S[i, K_i]`` s.t. ``sum K_i <= B`` and ``1 <= K_i <= k_orig``.

    Returns ``(AllocationVector, objective)``, plus the :class:`DPTable` when
    ``return_table`` is set.
    """
    S = as_matrix(S)
    table = build_dp_table(S, spec)
    last = table.dp[-1]
    end = int(np.argmin(last))  # first minimum, i.e. the smallest budget
    if last[end] == math.inf:
        raise InfeasibleBudgetError(f"no feasible allocation within budget {spec.global_budget}")
    alloc = AllocationVector(_backtrack(S, table, end))
    objective = float(last[end])
    if return_table:
        return alloc, objective, table
    return alloc, objective


def brute_force_allocation(S, spec: BudgetSpec):
    """Enumerate every allocation; same tie-breaking as :func:`optimal_allocation`."""
    S = as_matrix(S)
    _check(S, spec)
    L, K, B = spec.num_layers, spec.k_orig, spec.global_budget
    if K**L > BRUTE_FORCE_LIMIT:
        raise InstanceTooLargeError(f"{K}^{L} allocations exceed the enumeration limit")
    rows = S.values.tolist()
    best_key, best = None, None
    # product() yields vectors in lexicographic order, so strict improvement
    # keeps the lexicographically smallest among ties
    for cand in itertools.product(range(1, K + 1), repeat=L):
        used = sum(cand)
        if used > B:
            continue
        obj = 0.0
        for i, k in enumerate(cand):
            obj += rows[i][k - 1]
        key = (obj, used)
        if best_key is None or key < best_key:
            best_key, best = key, cand
    if best is None:
        raise InfeasibleBudgetError(f"no feasible allocation within budget {B}")
    return AllocationVector(best), best_key[0]


def dp_complexity_estimate(spec: BudgetSpec) -> int:
    """Upper bound ``L * B * k_orig`` on the DP's inner-loop iterations."""
    return spec.num_layers * spec.global_budget * spec.k_orig
