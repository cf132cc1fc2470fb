"""Acceptance criteria 1-10, each at its stated tolerance.

The conftest hook prints one PASS/FAIL line per criterion after the run.
"""

import math
import time
from fractions import Fraction

import numpy as np
import pytest
from click.testing import CliRunner

from allocmoe import cli as cli_mod
from allocmoe import serialize as ser
from allocmoe.alloc_l import brute_force_allocation, optimal_allocation
from allocmoe.alloc_t import brute_force_redistribute, redistribute
from allocmoe.baselines import (
    ascending_allocation,
    calibrate_naee,
    calibrate_top_p,
    descending_allocation,
    naee_counts,
    top_p_counts,
)
from allocmoe.budget import AllocationVector, BudgetSpec, LayerTokenBudget
from allocmoe.metrics import entropy_allocation_correlation, js_divergence, normalized_entropy, spearman
from allocmoe.metrics import speedup_estimate, CostModel
from allocmoe.routing import gate_softmax, top_k_route
from allocmoe.sensitivity import CountingOracle, profile_sensitivity, row_log_differences
from allocmoe.sim import SimConfig, gen_scores, synthetic_loss_oracle

from checks import random_schedule_input, schedule_violations


def test_criterion_01_dp_exactness():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    mismatches = 0
    for _ in range(1000):
        L = int(rng.integers(1, 7))
        K = int(rng.integers(1, 5))
        B = int(rng.integers(L, L * K + 1))
        S = rng.uniform(0.01, 10.0, size=(L, K))
        spec = BudgetSpec(L, K, B)
        if optimal_allocation(S, spec)[1] != brute_force_allocation(S, spec)[1]:
            mismatches += 1
    elapsed = time.perf_counter() - start
    print(f"dp vs brute force: {mismatches} mismatches in {elapsed:.2f}s")
    assert mismatches == 0
    assert elapsed < 10.0


def test_criterion_02_alloc_t_optimality():
    rng = np.random.default_rng(7)
    for _ in range(500):
        T = int(rng.integers(1, 6))
        N = int(rng.integers(1, 7))
        k_orig = int(rng.integers(1, min(4, N) + 1))
        k_base = int(rng.integers(0, k_orig + 1))
        num = int(rng.integers(max(k_base, 1) * T, k_orig * T + 1))
        budget = LayerTokenBudget(0, Fraction(num, T), k_base, T)
        probs = gate_softmax(rng.normal(scale=2.0, size=(T, N)))
        best, _ = brute_force_redistribute(probs, budget, k_orig)
        assert redistribute(probs, budget, k_orig).total_weight == best


def test_criterion_03_top_k_reduction():
    rng = np.random.default_rng(3)
    for _ in range(100):
        T, N = int(rng.integers(1, 64)), int(rng.integers(1, 17))
        probs = gate_softmax(rng.normal(scale=2.0, size=(T, N)))
        for k in range(1, N + 1):
            plan = redistribute(probs, LayerTokenBudget(0, k, k, T), N)
            ref = top_k_route(probs, k)
            assert plan.mask.active.tobytes() == ref.active.tobytes()
            assert plan.mask.weights.tobytes() == ref.weights.tobytes()


def test_criterion_04_profiling_fidelity():
    for (L, K), expected_calls in {(2, 2): 3, (16, 8): 113, (26, 6): 131}.items():
        counter = CountingOracle(lambda c: 1.0 + sum(c))
        profile_sensitivity(counter, L, K)
        assert counter.count == expected_calls
    cfg = SimConfig(6, 12, 6, 512, seed=1, concentration=(0.4, 0.8, 1.2, 1.6, 2.0, 2.4),
                    importance=(0.5, 1.0, 1.5, 2.0, 2.5, 3.0))
    oracle = synthetic_loss_oracle(cfg)
    S = profile_sensitivity(oracle, 6, 6)
    lam = np.array(cfg.importance)[:, None]
    m = oracle.dropped_mass[:, :6]
    expected = lam * (m - m[:, -1:]) / 6
    assert np.max(np.abs(row_log_differences(S) - expected)) <= 1e-9


def test_criterion_05_metric_identities():
    rng = np.random.default_rng(5)
    p = rng.uniform(size=10)
    p /= p.sum()
    a = rng.normal(size=30)
    assert abs(js_divergence(p, p)) <= 1e-12
    assert abs(spearman(a, a) - 1.0) <= 1e-12
    assert abs(normalized_entropy(np.full(16, 1 / 16)) - 1.0) <= 1e-12
    for _ in range(100):
        p, q = rng.uniform(size=8), rng.uniform(size=8)
        p, q = p / p.sum(), q / q.sum()
        assert abs(js_divergence(p, q) - js_divergence(q, p)) <= 1e-12


@pytest.fixture(scope="module")
def calib_batch():
    return gen_scores(SimConfig(1, 16, 8, 4096, seed=11), 0)


def test_criterion_06_calibration_accuracy(calib_batch):
    for target in (1.5, 2.0, 3.0, 4.5):
        res = calibrate_top_p(calib_batch, target)
        assert abs(res.achieved_avg - target) <= 0.05
        assert res.achieved_avg == top_p_counts(calib_batch, res.threshold).mean()
    for target in (1.5, 2.5, 4.0, 6.0):
        res = calibrate_naee(calib_batch, 8, target)
        assert abs(res.achieved_avg - target) <= 0.05
        assert res.achieved_avg == naee_counts(calib_batch, 8, res.threshold).mean()


def test_criterion_07_cost_model():
    full = AllocationVector((6,) * 26)
    half = AllocationVector((3,) * 26)
    assert speedup_estimate(full, half, CostModel(fixed_cost=0.0)) == 2.0


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_criterion_08_entropy_allocation_correlation(seed):
    # mixed population: per-token log-normal logit scale around alpha = 1.5
    cfg = SimConfig(1, 16, 8, 4096, seed=seed, concentration=(1.5,), token_spread=1.0)
    probs = gen_scores(cfg, 0)
    plan = redistribute(probs, LayerTokenBudget(0, 4, 1, 4096), 8)
    rho = entropy_allocation_correlation(probs, plan.mask)
    print(f"seed {seed}: spearman(count, entropy) = {rho:.4f}")
    assert rho >= 0.5


def test_criterion_09_schedule_structure():
    rng = np.random.default_rng(9)
    failures = 0
    for _ in range(500):
        L, K, B, lo, hi = random_schedule_input(rng)
        spec = BudgetSpec(L, K, B)
        failures += bool(schedule_violations(ascending_allocation(spec, lo, hi).per_layer, L, B, lo, hi, "ascending"))
        failures += bool(schedule_violations(descending_allocation(spec, lo, hi).per_layer, L, B, lo, hi,
                                             "descending"))
    assert failures == 0


def test_criterion_10_end_to_end_determinism(tmp_path):
    cfg = SimConfig(4, 8, 4, 256, seed=21, concentration=(0.5, 1.0, 1.5, 2.0), importance=(2.0, 1.0, 1.0, 0.5))
    ser.write_json(tmp_path / "cfg.json", cfg.to_dict())
    runner = CliRunner()
    trees = []
    for name in ("run_a", "run_b"):
        res = runner.invoke(cli_mod.cli, ["simulate", "--config", str(tmp_path / "cfg.json"), "--avg-k", "2.5",
                                          "--out", str(tmp_path / name)])
        assert res.exit_code == 0, res.output
        root = tmp_path / name
        trees.append({str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    assert "manifest.json" in trees[0]
    assert trees[0] == trees[1]
