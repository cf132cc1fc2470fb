# %% [markdown]
# How much does redistribution shift the load across experts?

# %%
import numpy as np

from allocmoe import LayerTokenBudget, SimConfig, gen_scores, redistribute, top_k_route
from allocmoe import compare_loads, expert_load, js_divergence, normalized_entropy, spearman

probs = gen_scores(SimConfig(1, 16, 8, 4096, seed=5, token_spread=0.5), 0)
full = top_k_route(probs, 8)
for K in (8, 6, 4, 2):
    plan = redistribute(probs, LayerTokenBudget(0, K, 1, probs.shape[0]), 8)
    c = compare_loads(full, plan.mask)
    print(f"K={K}: spearman {c.spearman:+.3f}  entropy delta {c.entropy_delta:+.4f}  JS {c.js:.2e}")

# %%
load = expert_load(full)
print("counts:", load.counts)
print("normalized entropy of counts:", round(normalized_entropy(load.distribution()), 4))
print("JS of disjoint supports:", js_divergence([1, 0], [0, 1]), "=", np.log(2))
print("spearman with ties:", spearman([1, 2, 2, 3], [1, 3, 2, 4]))
