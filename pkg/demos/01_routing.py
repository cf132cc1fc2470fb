# %% [markdown]
# Top-K routing on a toy mixture-of-experts layer.
#
# A gate turns logits into a softmax over experts; each token keeps its K
# best experts and the layer output mixes those experts' outputs with the
# retained (not renormalized) scores.

# %%
import numpy as np

from allocmoe import ToyExpertBank, gate_softmax, token_routing_entropy, top_k_route, toy_moe_forward

rng = np.random.default_rng(0)
logits = rng.normal(scale=2.0, size=(5, 8))
probs = gate_softmax(logits)
print("routing scores, rounded:\n", probs.round(3))

# %%
mask = top_k_route(probs, 2)
print("active experts per token:", mask.counts_per_token())
print("retained mass per token:", mask.weights.sum(axis=1).round(3))

# %% [markdown]
# Flatter rows have higher routing entropy; those tokens lose the most mass
# under a fixed K.

# %%
entropy = token_routing_entropy(probs)
for t in np.argsort(entropy):
    print(f"token {t}: entropy {entropy[t]:.3f}  kept {mask.weights[t].sum():.3f}")

# %%
bank = ToyExpertBank.from_seed(num_experts=8, hidden=4, seed=1)
x = rng.normal(size=(5, 4))
trace = []
y = toy_moe_forward(x, mask, bank, trace=trace)
print("output shape:", y.shape, " expert evaluations:", len(trace))
