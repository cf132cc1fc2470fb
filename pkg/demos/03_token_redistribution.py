# %% [markdown]
# Redistributing a layer's activation slots across tokens.
#
# Every token keeps its single best expert. The remaining slots go to the
# globally largest scores among each token's top candidates, so confident
# tokens give up slots to uncertain ones.

# %%
import numpy as np

from allocmoe import LayerTokenBudget, SimConfig, gen_scores, redistribute, top_k_route
from allocmoe import entropy_allocation_correlation, token_routing_entropy

probs = np.array([[0.8, 0.15, 0.05], [0.4, 0.35, 0.25]])
plan = redistribute(probs, LayerTokenBudget(layer=0, avg_per_token=2, k_base=1, token_count=2), k_orig=3)
print(plan.mask.active.astype(int))
print("retained weight:", plan.total_weight, " vs top-2:", top_k_route(probs, 2).weights.sum())

# %%
cfg = SimConfig(1, 16, 8, 4096, seed=0, concentration=(1.5,), token_spread=1.0)
probs = gen_scores(cfg, 0)
plan = redistribute(probs, LayerTokenBudget(0, 4, 1, cfg.num_tokens), k_orig=8)
counts = plan.mask.counts_per_token()
print("tokens per expert count:", dict(zip(*np.unique(counts, return_counts=True))))
print("spearman(count, entropy):", round(entropy_allocation_correlation(probs, plan.mask), 3))

# %%
entropy = token_routing_entropy(probs)
for k in range(1, 9):
    sel = counts == k
    if sel.any():
        print(f"{k} experts: mean entropy {entropy[sel].mean():.3f} over {sel.sum()} tokens")

# %%
ref = top_k_route(probs, 4)
print("retained mass  top-4:", round(ref.weights.sum(), 2), " redistributed:", round(plan.total_weight, 2))
