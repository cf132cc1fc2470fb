# %% [markdown]
# Measuring how much each layer cares about its expert count, then spending
# a global activation budget where it hurts least.

# %%
import numpy as np

from allocmoe import (
    BudgetSpec,
    CountingOracle,
    SimConfig,
    normalize_rows,
    optimal_allocation,
    profile_sensitivity,
    synthetic_loss_oracle,
    uniform_allocation,
    allocation_objective,
)

# early layers route flatly (small alpha) and matter more (large lambda)
cfg = SimConfig(
    num_layers=8, num_experts=16, k_orig=6, num_tokens=1024, seed=0,
    concentration=(0.4, 0.5, 0.7, 0.9, 1.2, 1.5, 2.0, 2.5),
    importance=(3, 3, 2, 2, 1, 1, 1, 1),
)
oracle = CountingOracle(synthetic_loss_oracle(cfg))
raw = profile_sensitivity(oracle, cfg.num_layers, cfg.k_orig)
print("oracle calls:", oracle.count)

# %%
S = normalize_rows(raw, "subtract-row-min")
np.set_printoptions(precision=4, suppress=True)
print("row-shifted sensitivity (layer x k):\n", S.values)

# %% [markdown]
# The layer allocator is an exact grouped-knapsack DP. Compare it with a
# uniform split at an average of three experts per layer.

# %%
spec = BudgetSpec(cfg.num_layers, cfg.k_orig, 3 * cfg.num_layers)
alloc, objective = optimal_allocation(S, spec)
uniform = uniform_allocation(spec)
print("dp allocation:     ", alloc.per_layer, f"objective {objective:.5f}")
print("uniform allocation:", uniform.per_layer, f"objective {allocation_objective(S, uniform):.5f}")

# %%
for B in range(cfg.num_layers, spec.full_budget + 1, 6):
    a, obj = optimal_allocation(S, BudgetSpec(cfg.num_layers, cfg.k_orig, B))
    print(f"B={B:3d}  {a.per_layer}  {obj:.5f}")
