"""Global and per-layer activation budgets."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import NamedTuple

from .errors import BudgetError, InfeasibleBudgetError


def as_fraction(value) -> Fraction:
    """Exact rational for ``value``; floats are read by their shortest decimal repr."""
    if isinstance(value, (int, Rational)):
        return Fraction(value)
    return Fraction(repr(float(value)))


def round_half_even(value) -> int:
    # Fraction.__round__ rounds half to even
    return round(as_fraction(value))


@dataclass(frozen=True)
class BudgetSpec:
    """``num_layers`` MoE layers, original Top-K ``k_orig`` and a global budget."""

    num_layers: int
    k_orig: int
    global_budget: int

    def __post_init__(self):
        if self.num_layers < 1 or self.k_orig < 1:
            raise BudgetError(f"need num_layers >= 1 and k_orig >= 1, got {self.num_layers}, {self.k_orig}")
        if self.global_budget < self.num_layers:
            raise InfeasibleBudgetError(
                f"budget {self.global_budget} < {self.num_layers} layers (each layer needs >= 1 expert)"
            )
        if self.global_budget > self.num_layers * self.k_orig:
            raise BudgetError(
                f"budget {self.global_budget} exceeds the full budget {self.num_layers * self.k_orig}"
            )

    @property
    def full_budget(self) -> int:
        return self.num_layers * self.k_orig

    @property
    def avg_per_layer(self) -> Fraction:
        return Fraction(self.global_budget, self.num_layers)

    def to_dict(self) -> dict:
        return {"L": self.num_layers, "k_orig": self.k_orig, "B": self.global_budget}

    @classmethod
    def from_dict(cls, data: dict) -> "BudgetSpec":
        return cls(int(data["L"]), int(data["k_orig"]), int(data["B"]))


def budget_from_avg(num_layers: int, k_orig: int, avg_k) -> BudgetSpec:
    """Budget spec whose global budget is ``round(L * avg_k)``."""
    avg = as_fraction(avg_k)
    if not 1 <= avg <= k_orig:
        raise BudgetError(f"average budget {avg_k} outside [1, {k_orig}]")
    return BudgetSpec(num_layers, k_orig, round_half_even(num_layers * avg))


@dataclass(frozen=True)
class AllocationVector:
    per_layer: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "per_layer", tuple(int(k) for k in self.per_layer))

    def __len__(self):
        return len(self.per_layer)

    def __iter__(self):
        return iter(self.per_layer)

    def __getitem__(self, i):
        return self.per_layer[i]

    @property
    def total(self) -> int:
        return sum(self.per_layer)

    def to_dict(self) -> dict:
        return {"per_layer": list(self.per_layer)}

    @classmethod
    def from_dict(cls, data: dict) -> "AllocationVector":
        return cls(tuple(data["per_layer"]))


class Violation(NamedTuple):
    layer: int | None  # None for the global sum constraint
    kind: str  # "below_min", "above_k_orig" or "over_budget"
    message: str


def validate_allocation(alloc: AllocationVector, spec: BudgetSpec) -> list[Violation]:
    """Every violated constraint of ``alloc`` under ``spec``; an empty list means valid."""
    if len(alloc) != spec.num_layers:
        raise ValueError(f"allocation has {len(alloc)} layers, spec has {spec.num_layers}")
    out = []
    for i, k in enumerate(alloc):
        if k < 1:
            out.append(Violation(i, "below_min", f"layer {i}: K={k} < 1"))
        elif k > spec.k_orig:
            out.append(Violation(i, "above_k_orig", f"layer {i}: K={k} > k_orig={spec.k_orig}"))
    if alloc.total > spec.global_budget:
        out.append(
            Violation(None, "over_budget", f"sum {alloc.total} exceeds budget {spec.global_budget}")
        )
    return out


@dataclass(frozen=True)
class LayerTokenBudget:
    """Average per-token budget of one layer over a batch of ``token_count`` tokens.

    The average may be fractional; the layer then gets ``round(T * K_l)``
    activation slots in total (round half to even).
    """

    layer: int
    avg_per_token: Fraction
    k_base: int
    token_count: int

    def __post_init__(self):
        object.__setattr__(self, "avg_per_token", as_fraction(self.avg_per_token))
        if self.k_base < 0:
            raise BudgetError(f"k_base must be >= 0, got {self.k_base}")
        if self.token_count < 1:
            raise BudgetError("token_count must be >= 1")
        if self.avg_per_token <= 0:
            raise BudgetError(f"average budget must be positive, got {self.avg_per_token}")
        if self.k_base > self.avg_per_token:
            raise InfeasibleBudgetError(
                f"layer {self.layer}: k_base={self.k_base} exceeds average budget {self.avg_per_token}"
            )

    @property
    def total_slots(self) -> int:
        return round_half_even(self.token_count * self.avg_per_token)
