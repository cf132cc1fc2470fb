"""Expert-load statistics and the activation-count cost model."""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .budget import AllocationVector, as_fraction
from .errors import InvalidInputError
from .routing import ActivationMask, token_routing_entropy

DIST_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ExpertLoad:
    counts: np.ndarray  # tokens routed to each expert
    weighted: np.ndarray  # summed routing weight per expert

    def distribution(self, basis: str = "counts") -> np.ndarray:
        """Load normalized to sum to one (``basis`` is ``counts`` or ``weighted``)."""
        v = self.counts.astype(np.float64) if basis == "counts" else self.weighted
        total = v.sum()
        if total <= 0:
            raise InvalidInputError("load is empty")
        return v / total


def expert_load(mask: ActivationMask) -> ExpertLoad:
    return ExpertLoad(mask.active.sum(axis=0).astype(np.int64), mask.weights.sum(axis=0))


def average_ranks(x) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(len(x))
    start = 0
    for end in range(1, len(x) + 1):
        if end == len(x) or xs[end] != xs[start]:
            ranks[order[start:end]] = 0.5 * (start + end - 1) + 1.0
            start = end
    return ranks


def spearman(a, b) -> float:
    """Spearman's rho as the Pearson correlation of average ranks.

    Returns ``nan`` when either argument has no rank variance (all equal).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise InvalidInputError("spearman needs two equal-length vectors of length >= 2")
    ra = average_ranks(a) - (a.size + 1) / 2
    rb = average_ranks(b) - (b.size + 1) / 2
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0:
        return math.nan
    return max(-1.0, min(1.0, float(ra @ rb) / den))


def _check_dist(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > DIST_TOL:
        raise InvalidInputError("expected a 1-D probability vector summing to 1")
    return p


def _plogp(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(p > 0, p * np.log(p), 0.0)


def normalized_entropy(p) -> float:
    """``H(p) / ln N`` in [0, 1]."""
    p = _check_dist(p)
    if p.size < 2:
        raise InvalidInputError("normalized entropy needs N >= 2")
    h = -float(_plogp(p).sum())
    return min(max(h / math.log(p.size), 0.0), 1.0)


def _kl(p: np.ndarray, m: np.ndarray) -> float:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p / m), 0.0)
    return float(terms.sum())


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in nats, in ``[0, ln 2]``."""
    p, q = _check_dist(p), _check_dist(q)
    if p.shape != q.shape:
        raise InvalidInputError(f"support sizes differ: {p.size} vs {q.size}")
    m = 0.5 * (p + q)
    # sum the two halves in a fixed order so JS(p, q) == JS(q, p) exactly
    a, b = _kl(p, m), _kl(q, m)
    lo, hi = (a, b) if a <= b else (b, a)
    return min(max(0.5 * lo + 0.5 * hi, 0.0), math.log(2))


@dataclass(frozen=True)
class LoadComparison:
    spearman: float
    entropy_delta: float
    js: float


def compare_loads(baseline: ActivationMask, compare: ActivationMask, spearman_on: str = "counts") -> LoadComparison:
    """Shift of the expert load from ``baseline`` to ``compare``.

    Rank correlation uses ``spearman_on`` (counts by default). The entropy
    delta is ``H_norm(compare) - H_norm(baseline)`` on count distributions;
    JS divergence is taken between the weighted load distributions.
    """
    if baseline.active.shape[1] != compare.active.shape[1]:
        raise InvalidInputError("masks route to different numbers of experts")
    la, lb = expert_load(baseline), expert_load(compare)
    if spearman_on == "counts":
        rho = spearman(la.counts, lb.counts)
    elif spearman_on == "weighted":
        rho = spearman(la.weighted, lb.weighted)
    else:
        raise InvalidInputError(f"unknown spearman basis {spearman_on!r}")
    delta = normalized_entropy(lb.distribution("counts")) - normalized_entropy(la.distribution("counts"))
    js = js_divergence(la.distribution("weighted"), lb.distribution("weighted"))
    return LoadComparison(rho, delta, js)


def entropy_allocation_correlation(probs, mask: ActivationMask) -> float:
    """Spearman correlation between per-token expert counts and routing entropy."""
    return spearman(mask.counts_per_token(), token_routing_entropy(probs))


@dataclass(frozen=True)
class CostModel:
    """Layer cost ``fixed_cost + per_activation_cost * K_i``."""

    fixed_cost: float = 0.0
    per_activation_cost: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.fixed_cost) and math.isfinite(self.per_activation_cost)):
            raise InvalidInputError("cost model parameters must be finite")
        if self.fixed_cost < 0 or self.per_activation_cost <= 0:
            raise InvalidInputError("need fixed_cost >= 0 and per_activation_cost > 0")

    def cost(self, alloc) -> Fraction:
        ks = list(alloc)
        return len(ks) * as_fraction(self.fixed_cost) + as_fraction(self.per_activation_cost) * sum(ks)


def speedup_estimate(alloc_a: AllocationVector, alloc_b: AllocationVector, model: CostModel = CostModel()) -> float:
    """``cost(alloc_a) / cost(alloc_b)``, evaluated exactly and rounded once."""
    if len(alloc_a) != len(alloc_b):
        raise InvalidInputError("allocations cover different numbers of layers")
    return float(model.cost(alloc_a) / model.cost(alloc_b))
