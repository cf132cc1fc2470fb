"""Allocation-isolated layer sensitivity profiling.

A loss oracle maps a full per-layer Top-K configuration to a positive loss
(perplexity in a real deployment). To profile layer ``i`` every deeper layer is
pinned to Top-1 and every shallower layer to ``k_orig``, so loss changes while
sweeping layer ``i`` from ``k_orig`` down to 1 are attributable to that layer.

Layers are walked from the last to the first. The sweep for layer ``i + 1``
ends at configuration ``[k_orig]*(i+1) + [1]*(L-i-1)``, which is exactly the
``k = k_orig`` point for layer ``i``, so that measurement is reused and the
whole profile costs ``1 + L * (k_orig - 1)`` oracle calls.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import InvalidInputError, OracleError

NORMALIZATIONS = ("none", "subtract-row-min", "divide-by-full-activation")
NORMALIZATION_ALIASES = {
    "none": "none",
    "submin": "subtract-row-min",
    "subtract-row-min": "subtract-row-min",
    "divfull": "divide-by-full-activation",
    "divide-by-full-activation": "divide-by-full-activation",
}
DEFAULT_NORMALIZATION = "subtract-row-min"


class LossOracle(Protocol):
    def __call__(self, config: tuple[int, ...]) -> float: ...


class CountingOracle:
    """Wraps an oracle and records every configuration it is asked about."""

    def __init__(self, oracle: Callable[[tuple[int, ...]], float]):
        self.oracle = oracle
        self.calls: list[tuple[int, ...]] = []

    def __call__(self, config):
        self.calls.append(tuple(config))
        return self.oracle(config)

    @property
    def count(self) -> int:
        return len(self.calls)


@dataclass(frozen=True, eq=False)
class SensitivityMatrix:
    """``values[i, k-1]`` is the loss with layer ``i`` at Top-``k`` under isolation."""

    values: np.ndarray
    normalization: str = "none"
    protocol: str = "sequential"

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise InvalidInputError(f"sensitivity matrix must be a non-empty 2-D array, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("sensitivity entries must be finite")
        if self.normalization not in NORMALIZATIONS:
            raise InvalidInputError(f"unknown normalization {self.normalization!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def num_layers(self) -> int:
        return self.values.shape[0]

    @property
    def k_orig(self) -> int:
        return self.values.shape[1]

    def at(self, layer: int, k: int) -> float:
        """Entry for ``k`` activated experts (1-based, as in the configuration)."""
        return float(self.values[layer, k - 1])


def isolation_config(layer: int, k: int, num_layers: int, k_orig: int) -> tuple[int, ...]:
    return tuple([k_orig] * layer + [k] + [1] * (num_layers - layer - 1))


def _evaluate(oracle, config) -> float:
    try:
        loss = oracle(config)
    except OracleError:
        raise
    except Exception as exc:
        raise OracleError(f"oracle failed: {exc}", config) from exc
    loss = float(loss)
    if not math.isfinite(loss) or loss <= 0:
        raise OracleError(f"oracle returned non-positive or non-finite loss {loss!r}", config)
    return loss


def profile_sensitivity(
    oracle: LossOracle,
    num_layers: int,
    k_orig: int,
    *,
    independent: bool = False,
    max_workers: int | None = None,
) -> SensitivityMatrix:
    """Build the ``L x k_orig`` sensitivity matrix.

    The default sequential mode reuses measurements and issues exactly
    ``1 + L * (k_orig - 1)`` oracle calls. ``independent=True`` measures each
    of the ``L * k_orig`` isolation configurations separately, concurrently
    when ``max_workers > 1``; the oracle must then tolerate concurrent calls.
    For a deterministic oracle both modes return the same matrix.
    """
    if num_layers < 1 or k_orig < 1:
        raise InvalidInputError(f"need L >= 1 and k_orig >= 1, got {num_layers}, {k_orig}")
    S = np.zeros((num_layers, k_orig))

    if independent:
        jobs = [
            (i, k, isolation_config(i, k, num_layers, k_orig))
            for i in range(num_layers - 1, -1, -1)
            for k in range(k_orig, 0, -1)
        ]
        if max_workers and max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                losses = list(pool.map(lambda job: _evaluate(oracle, job[2]), jobs))
        else:
            losses = [_evaluate(oracle, job[2]) for job in jobs]
        for (i, k, _), loss in zip(jobs, losses):
            S[i, k - 1] = loss
        return SensitivityMatrix(S, protocol="independent")

    config = [k_orig] * num_layers
    ppl = _evaluate(oracle, tuple(config))
    for i in range(num_layers - 1, -1, -1):
        S[i, k_orig - 1] = ppl
        for k in range(k_orig - 1, 0, -1):
            config[i] = k
            ppl = _evaluate(oracle, tuple(config))
            S[i, k - 1] = ppl
    return SensitivityMatrix(S, protocol="sequential")


def expected_oracle_calls(num_layers: int, k_orig: int, independent: bool = False) -> int:
    if independent:
        return num_layers * k_orig
    return 1 + num_layers * (k_orig - 1)


def normalize_rows(S: SensitivityMatrix, strategy: str = DEFAULT_NORMALIZATION) -> SensitivityMatrix:
    """Row normalization of a raw sensitivity matrix.

    ``subtract-row-min`` shifts each row so its minimum is zero. Such per-row
    shifts add the same constant to every feasible allocation's objective,
    so they never change which allocation is optimal.
    ``divide-by-full-activation`` divides each row by its ``k_orig`` entry.
    """
    try:
        strategy = NORMALIZATION_ALIASES[strategy]
    except KeyError:
        raise InvalidInputError(f"unknown normalization {strategy!r}") from None
    v = S.values
    if strategy == "none":
        return S
    if strategy == "subtract-row-min":
        out = v - v.min(axis=1, keepdims=True)
    else:
        full = v[:, -1:]
        if np.any(full == 0):
            raise ArithmeticError("cannot divide by a zero full-activation entry")
        out = v / full
    return replace(S, values=out, normalization=strategy)


def row_log_differences(S: SensitivityMatrix, reference_k: int | None = None) -> np.ndarray:
    """``ln S[i, k] - ln S[i, reference_k]`` for every row (default reference ``k_orig``)."""
    ref = S.k_orig if reference_k is None else reference_k
    logs = np.log(S.values)
    return logs - logs[:, ref - 1 : ref]


def as_matrix(values: Sequence[Sequence[float]] | np.ndarray | SensitivityMatrix) -> SensitivityMatrix:
    if isinstance(values, SensitivityMatrix):
        return values
    return SensitivityMatrix(np.asarray(values, dtype=np.float64))
