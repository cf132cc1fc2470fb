"""Gate probabilities, Top-K routing and a toy expert bank.

Scores are plain ``(T, N)`` float arrays (tokens x experts). Masks are
:class:`ActivationMask` values holding a boolean activation pattern and the
weights each active expert contributes to the token's output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BudgetError, InvalidInputError

ROW_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ActivationMask:
    """Token-to-expert activations.

    ``weights[t, e]`` is zero wherever ``active[t, e]`` is False. An active
    entry may still carry weight zero (a zero routing score that was selected).
    """

    active: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        active = np.asarray(self.active, dtype=bool)
        weights = np.asarray(self.weights, dtype=np.float64)
        if active.ndim != 2 or active.shape != weights.shape:
            raise InvalidInputError(
                f"active {active.shape} and weights {weights.shape} must be equal 2-D shapes"
            )
        if np.any(weights[~active] != 0.0):
            raise InvalidInputError("inactive entries must carry zero weight")
        if active.shape[0] and np.any(active.sum(axis=1) < 1):
            raise InvalidInputError("every token must activate at least one expert")
        active.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "active", active)
        object.__setattr__(self, "weights", weights)

    @property
    def num_tokens(self) -> int:
        return self.active.shape[0]

    @property
    def num_experts(self) -> int:
        return self.active.shape[1]

    def counts_per_token(self) -> np.ndarray:
        return self.active.sum(axis=1)

    @property
    def total_activations(self) -> int:
        return int(self.active.sum())

    def __eq__(self, other):
        if not isinstance(other, ActivationMask):
            return NotImplemented
        return (
            self.active.shape == other.active.shape
            and bool(np.array_equal(self.active, other.active))
            and bool(np.array_equal(self.weights, other.weights))
        )

    __hash__ = None


def check_probs(probs) -> np.ndarray:
    """Validate a routing-score matrix and return it as a float64 array."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 1 or probs.shape[1] < 1:
        raise InvalidInputError(f"routing scores must be a non-empty (T, N) matrix, got {probs.shape}")
    if not np.all(np.isfinite(probs)):
        raise InvalidInputError("routing scores must be finite")
    if np.any(probs < 0.0) or np.any(probs > 1.0):
        raise InvalidInputError("routing scores must lie in [0, 1]")
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
        worst = int(np.argmax(np.abs(sums - 1.0)))
        raise InvalidInputError(f"row {worst} sums to {sums[worst]!r}, not 1")
    return probs


def gate_softmax(logits) -> np.ndarray:
    """Row-wise softmax of gate logits, using the max-subtraction form."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 1 or logits.shape[1] < 1:
        raise InvalidInputError(f"logits must be a non-empty (T, N) matrix, got {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise InvalidInputError("logits must be finite")
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def rank_experts(probs: np.ndarray) -> np.ndarray:
    """Per-token expert indices sorted by descending score, lower index first on ties."""
    # stable sort on the negated scores keeps equal scores in index order
    return np.argsort(-probs, axis=1, kind="stable")


def top_k_route(probs, k: int, renormalize: bool = False) -> ActivationMask:
    """Keep each token's ``k`` highest-scoring experts.

    Retained weights are the softmax scores themselves unless ``renormalize``
    is set, in which case they are rescaled to sum to one per token.
    """
    probs = check_probs(probs)
    n = probs.shape[1]
    if not 1 <= k <= n:
        raise BudgetError(f"k={k} outside [1, {n}]")
    chosen = rank_experts(probs)[:, :k]
    active = np.zeros(probs.shape, dtype=bool)
    np.put_along_axis(active, chosen, True, axis=1)
    weights = np.where(active, probs, 0.0)
    if renormalize:
        totals = weights.sum(axis=1, keepdims=True)
        weights = np.divide(weights, totals, out=np.zeros_like(weights), where=totals > 0)
    return ActivationMask(active, weights)


@dataclass(frozen=True, eq=False)
class ToyExpertBank:
    """``N`` affine experts ``E_e(x) = x @ W[e] + b[e]`` on hidden size ``H``."""

    weight: np.ndarray  # (N, H, H)
    bias: np.ndarray  # (N, H)

    @classmethod
    def from_seed(cls, num_experts: int, hidden: int, seed: int = 0) -> "ToyExpertBank":
        rng = np.random.default_rng(seed)
        w = rng.standard_normal((num_experts, hidden, hidden)) / np.sqrt(hidden)
        b = rng.standard_normal((num_experts, hidden)) * 0.1
        return cls(w, b)

    @property
    def num_experts(self) -> int:
        return self.weight.shape[0]

    @property
    def hidden(self) -> int:
        return self.weight.shape[1]

    def expert(self, e: int, x: np.ndarray) -> np.ndarray:
        return x @ self.weight[e] + self.bias[e]


def toy_moe_forward(x, mask: ActivationMask, bank: ToyExpertBank, *, trace: list | None = None) -> np.ndarray:
    """Weighted sum of expert outputs per token.

    Experts whose weight is zero are skipped entirely. If ``trace`` is given,
    every evaluated ``(token, expert)`` pair is appended to it.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != bank.hidden:
        raise InvalidInputError(f"x has shape {x.shape}, expected (T, {bank.hidden})")
    if mask.num_experts != bank.num_experts or mask.num_tokens != x.shape[0]:
        raise InvalidInputError(
            f"mask is {mask.active.shape}, expected ({x.shape[0]}, {bank.num_experts})"
        )
    out = np.zeros_like(x)
    for t, e in zip(*np.nonzero(mask.weights)):
        if trace is not None:
            trace.append((int(t), int(e)))
        out[t] += mask.weights[t, e] * bank.expert(e, x[t])
    return out


def token_routing_entropy(probs) -> np.ndarray:
    """Shannon entropy (nats) of each token's routing distribution, with 0 log 0 = 0."""
    probs = check_probs(probs)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(probs > 0, probs * np.log(probs), 0.0)
    return np.maximum(-terms.sum(axis=1), 0.0)
