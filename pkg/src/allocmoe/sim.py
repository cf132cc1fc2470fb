"""Synthetic MoE workloads and an end-to-end allocation pipeline.

Gate logits for layer ``i`` are standard normal draws scaled by the layer's
concentration ``alpha_i`` (and optionally by a per-token log-normal factor),
so larger ``alpha`` gives peakier routing and lower entropy. The synthetic
loss charges each layer for the routing mass that Top-K truncation drops::

    m_i(k)  = mean over tokens of (1 - sum of the k largest scores)
    loss(C) = exp( (1/L) * sum_i lambda_i * m_i(C[i]) )

which is monotone in every coordinate and separable across layers.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alloc_l import optimal_allocation
from .alloc_t import RedistributionPlan, redistribute
from .budget import AllocationVector, BudgetSpec, LayerTokenBudget
from .errors import AllocMoEError, InvalidInputError
from .metrics import CostModel, compare_loads, entropy_allocation_correlation, speedup_estimate
from .routing import gate_softmax, rank_experts, top_k_route
from .sensitivity import (
    DEFAULT_NORMALIZATION,
    CountingOracle,
    SensitivityMatrix,
    normalize_rows,
    profile_sensitivity,
)
from . import serialize as ser


@dataclass(frozen=True)
class SimConfig:
    num_layers: int
    num_experts: int
    k_orig: int
    num_tokens: int
    seed: int = 0
    concentration: tuple[float, ...] = ()  # alpha per layer, default all 1
    importance: tuple[float, ...] = ()  # lambda per layer, default all 1
    token_spread: float = 0.0  # std-dev of the per-token log scale

    def __post_init__(self):
        L = self.num_layers
        if min(L, self.num_experts, self.k_orig, self.num_tokens) < 1:
            raise InvalidInputError("L, N, k_orig and T must all be positive")
        if self.k_orig > self.num_experts:
            raise InvalidInputError(f"k_orig={self.k_orig} exceeds N={self.num_experts}")
        alpha = tuple(float(a) for a in self.concentration) or (1.0,) * L
        lam = tuple(float(x) for x in self.importance) or (1.0,) * L
        if len(alpha) != L or len(lam) != L:
            raise InvalidInputError("concentration and importance need one entry per layer")
        if any(not a > 0 for a in alpha) or any(not x >= 0 for x in lam):
            raise InvalidInputError("need alpha > 0 and lambda >= 0")
        if not self.token_spread >= 0:
            raise InvalidInputError("token_spread must be >= 0")
        object.__setattr__(self, "concentration", alpha)
        object.__setattr__(self, "importance", lam)

    def to_dict(self) -> dict:
        return {
            "L": self.num_layers,
            "N": self.num_experts,
            "k_orig": self.k_orig,
            "T": self.num_tokens,
            "seed": self.seed,
            "alpha": list(self.concentration),
            "lambda": list(self.importance),
            "token_spread": self.token_spread,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        try:
            return cls(
                num_layers=int(data["L"]),
                num_experts=int(data["N"]),
                k_orig=int(data["k_orig"]),
                num_tokens=int(data["T"]),
                seed=int(data.get("seed", 0)),
                concentration=tuple(data.get("alpha", ())),
                importance=tuple(data.get("lambda", ())),
                token_spread=float(data.get("token_spread", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"bad simulation config: {exc!r}") from exc


def gen_gate_logits(cfg: SimConfig, layer: int) -> np.ndarray:
    if not 0 <= layer < cfg.num_layers:
        raise InvalidInputError(f"layer {layer} outside [0, {cfg.num_layers})")
    rng = np.random.default_rng([cfg.seed, layer])
    z = rng.standard_normal((cfg.num_tokens, cfg.num_experts))
    token_scale = np.exp(cfg.token_spread * rng.standard_normal(cfg.num_tokens))
    return cfg.concentration[layer] * token_scale[:, None] * z


def gen_scores(cfg: SimConfig, layer: int) -> np.ndarray:
    return gate_softmax(gen_gate_logits(cfg, layer))


def dropped_mass(probs) -> np.ndarray:
    """``m(k)`` for ``k = 1..N``: mean routing mass outside each token's top-k."""
    probs = np.asarray(probs, dtype=np.float64)
    sorted_scores = np.take_along_axis(probs, rank_experts(probs), axis=1)
    m = np.maximum(1.0 - np.cumsum(sorted_scores, axis=1), 0.0).mean(axis=0)
    m[-1] = 0.0  # keeping every expert drops nothing
    return m


class SyntheticLossOracle:
    """Dropped-routing-mass loss over a fixed synthetic calibration batch."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.dropped_mass = np.vstack([dropped_mass(gen_scores(cfg, i)) for i in range(cfg.num_layers)])
        self._lam = np.asarray(cfg.importance)

    def exponent(self, config) -> float:
        cfg = self.cfg
        if len(config) != cfg.num_layers:
            raise InvalidInputError(f"configuration has {len(config)} layers, expected {cfg.num_layers}")
        total = 0.0
        for i, k in enumerate(config):
            if not 1 <= k <= cfg.num_experts:
                raise InvalidInputError(f"layer {i}: Top-{k} outside [1, {cfg.num_experts}]")
            total += self._lam[i] * self.dropped_mass[i, k - 1]
        return total / cfg.num_layers

    def __call__(self, config) -> float:
        return math.exp(self.exponent(config))


def synthetic_loss_oracle(cfg: SimConfig) -> SyntheticLossOracle:
    return SyntheticLossOracle(cfg)


@dataclass(eq=False)
class PipelineReport:
    config: SimConfig
    spec: BudgetSpec
    k_base: int
    sensitivity_raw: SensitivityMatrix
    sensitivity: SensitivityMatrix
    oracle_calls: int
    allocation: AllocationVector
    objective: float
    scores: list[np.ndarray]
    plans: list[RedistributionPlan]
    reference: list[RedistributionPlan]
    layer_metrics: list[dict] = field(default_factory=list)
    speedup: float = 1.0

    def summary(self) -> dict:
        return {
            "L": self.spec.num_layers,
            "k_orig": self.spec.k_orig,
            "B": self.spec.global_budget,
            "k_base": self.k_base,
            "allocation": list(self.allocation),
            "objective": self.objective,
            "budget_used": self.allocation.total,
            "oracle_calls": self.oracle_calls,
            "normalization": self.sensitivity.normalization,
            "speedup_estimate": self.speedup,
        }


@contextmanager
def _stage(name: str):
    try:
        yield
    except AllocMoEError as exc:
        exc.stage = name
        raise


def reference_plan(probs, k: int) -> RedistributionPlan:
    """Plain Top-``k`` routing wrapped as a plan."""
    mask = top_k_route(probs, k)
    slots = mask.num_tokens * k
    return RedistributionPlan(mask, mask.total_activations, k, slots)


def run_pipeline(
    cfg: SimConfig,
    spec: BudgetSpec,
    k_base: int = 1,
    *,
    normalization: str = DEFAULT_NORMALIZATION,
    cost_model: CostModel = CostModel(),
) -> PipelineReport:
    """Profile, allocate across layers, redistribute across tokens, then measure."""
    if (spec.num_layers, spec.k_orig) != (cfg.num_layers, cfg.k_orig):
        raise InvalidInputError("budget spec and simulation config disagree on L or k_orig")
    with _stage("profile"):
        oracle = CountingOracle(synthetic_loss_oracle(cfg))
        raw = profile_sensitivity(oracle, cfg.num_layers, cfg.k_orig)
        S = normalize_rows(raw, normalization)
    with _stage("alloc"):
        alloc, objective = optimal_allocation(S, spec)

    scores, plans, refs, rows = [], [], [], []
    for i, k_l in enumerate(alloc):
        probs = gen_scores(cfg, i)
        with _stage("redistribute"):
            plan = redistribute(probs, LayerTokenBudget(i, k_l, k_base, cfg.num_tokens), cfg.k_orig)
        ref = reference_plan(probs, cfg.k_orig)
        cmp = compare_loads(ref.mask, plan.mask)
        rows.append({
            "layer": i,
            "K": k_l,
            "slots_used": plan.slots_used,
            "spearman": cmp.spearman,
            "entropy_delta": cmp.entropy_delta,
            "js": cmp.js,
            "entropy_allocation_corr": entropy_allocation_correlation(probs, plan.mask),
        })
        scores.append(probs)
        plans.append(plan)
        refs.append(ref)

    full = AllocationVector((cfg.k_orig,) * cfg.num_layers)
    return PipelineReport(
        config=cfg,
        spec=spec,
        k_base=k_base,
        sensitivity_raw=raw,
        sensitivity=S,
        oracle_calls=oracle.count,
        allocation=alloc,
        objective=objective,
        scores=scores,
        plans=plans,
        reference=refs,
        layer_metrics=rows,
        speedup=speedup_estimate(full, alloc, cost_model),
    )


def plans_summary(plans: list[RedistributionPlan]) -> dict:
    layers = []
    for i, plan in enumerate(plans):
        counts = plan.mask.counts_per_token()
        values, freq = np.unique(counts, return_counts=True)
        layers.append({
            "layer": i,
            "k_base": plan.k_base,
            "total_slots": plan.total_slots,
            "slots_used": plan.slots_used,
            "tokens_per_count": {str(int(v)): int(f) for v, f in zip(values, freq)},
        })
    return {"layers": layers}


def write_plans(directory, plans: list[RedistributionPlan]) -> list[str]:
    directory = Path(directory)
    names = []
    for i, plan in enumerate(plans):
        name = f"layer_{i:03d}.json"
        ser.write_json(directory / name, ser.plan_to_json(plan))
        names.append(name)
    ser.write_json(directory / "summary.json", plans_summary(plans))
    return names + ["summary.json"]


def read_plans(directory) -> list[RedistributionPlan]:
    directory = Path(directory)
    files = sorted(directory.glob("layer_*.json"))
    if not files:
        raise InvalidInputError(f"no layer_*.json plans in {directory}")
    return [ser.plan_from_json(ser.read_json(f)) for f in files]


def layer_metrics_rows(baseline: list[RedistributionPlan], compare: list[RedistributionPlan],
                       spearman_on: str = "counts") -> list[dict]:
    if len(baseline) != len(compare):
        raise InvalidInputError(f"{len(baseline)} baseline layers vs {len(compare)} compare layers")
    rows = []
    for i, (a, b) in enumerate(zip(baseline, compare)):
        if a.mask.active.shape != b.mask.active.shape:
            raise InvalidInputError(f"layer {i}: mask shapes {a.mask.active.shape} vs {b.mask.active.shape}")
        c = compare_loads(a.mask, b.mask, spearman_on)
        rows.append({"layer": i, "spearman": c.spearman, "entropy_delta": c.entropy_delta, "js": c.js})
    return rows


def aggregate_metrics(rows: list[dict]) -> dict:
    def stats(key):
        vals = [r[key] for r in rows if not math.isnan(r[key])]
        if not vals:
            return {"min": math.nan, "max": math.nan, "mean": math.nan}
        return {"min": min(vals), "max": max(vals), "mean": math.fsum(vals) / len(vals)}
    return {k: stats(k) for k in ("spearman", "entropy_delta", "js")}


def write_report(report: PipelineReport, outdir) -> list[str]:
    """Write every pipeline artifact under ``outdir``; returns the relative file names."""
    out = Path(outdir)
    files: list[str] = []

    def put_json(name, obj):
        ser.write_json(out / name, obj)
        files.append(name)

    def put_text(name, text):
        ser.atomic_write(out / name, text)
        files.append(name)

    put_json("config.json", report.config.to_dict())
    put_json("budget.json", ser.budget_to_json(report.spec))
    put_text("sensitivity_raw.csv", ser.sensitivity_to_csv(report.sensitivity_raw))
    put_json("sensitivity_raw.json", ser.sensitivity_to_json(report.sensitivity_raw))
    put_text("sensitivity.csv", ser.sensitivity_to_csv(report.sensitivity))
    put_json("sensitivity.json", ser.sensitivity_to_json(report.sensitivity))
    put_json("allocation.json", ser.allocation_to_json(report.allocation))
    put_json("allocation_report.json", {"objective": report.objective, "budget_used": report.allocation.total})
    put_json("scores.json", ser.layered_scores_to_json(report.scores, report.spec.k_orig))
    files += [f"plans/{n}" for n in write_plans(out / "plans", report.plans)]
    files += [f"reference/{n}" for n in write_plans(out / "reference", report.reference)]
    metric_rows = [{k: r[k] for k in ("layer", "spearman", "entropy_delta", "js")} for r in report.layer_metrics]
    put_json("metrics.json", {"layers": metric_rows, "summary": aggregate_metrics(metric_rows)})
    put_text("metrics.csv", ser.metrics_to_csv(metric_rows))
    put_json("layers.json", {"layers": report.layer_metrics})
    put_json("report.json", {**report.summary(), "files": sorted(files)})
    return sorted(files + ["report.json"])
