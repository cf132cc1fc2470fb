# %% [markdown]
# Comparison allocators: fixed schedules across layers, and threshold-based
# routing calibrated to a target average expert count.

# %%
import numpy as np

from allocmoe import BudgetSpec, SimConfig, gen_scores
from allocmoe import ascending_allocation, descending_allocation, uniform_allocation
from allocmoe import calibrate_naee, calibrate_top_p

spec = BudgetSpec(num_layers=12, k_orig=6, global_budget=40)
print("uniform:   ", uniform_allocation(spec, spread_remainder=True).per_layer)
print("ascending: ", ascending_allocation(spec).per_layer)
print("descending:", descending_allocation(spec, k_min=2, k_max=5).per_layer)

# %%
probs = gen_scores(SimConfig(1, 16, 8, 4096, seed=3), 0)
for target in (1.5, 2.0, 3.0, 4.0):
    p = calibrate_top_p(probs, target)
    b = calibrate_naee(probs, 8, target)
    print(f"target {target}:  top-p P={p.threshold:.6f} -> {p.achieved_avg:.4f}"
          f"   skip beta={b.threshold:.6f} -> {b.achieved_avg:.4f}")
