# %% [markdown]
# The whole pipeline on a synthetic model: profile, allocate layers,
# redistribute tokens, measure, and write every artifact to disk.

# %%
import json
import tempfile
from pathlib import Path

from allocmoe import BudgetSpec, SimConfig, budget_from_avg, run_pipeline, write_report

cfg = SimConfig(
    num_layers=26, num_experts=64, k_orig=6, num_tokens=512, seed=0,
    concentration=tuple(0.5 + 0.08 * i for i in range(26)),
)
for avg in (6, 4.5, 3):
    spec = budget_from_avg(cfg.num_layers, cfg.k_orig, avg)
    report = run_pipeline(cfg, spec, k_base=1)
    print(f"avg {avg}: {report.allocation.per_layer}  speedup {report.speedup:.3f}")

# %%
outdir = Path(tempfile.mkdtemp()) / "run"
files = write_report(report, outdir)
print(len(files), "files under", outdir)
print(json.dumps(report.summary(), indent=1)[:400])

# %% [markdown]
# The same run from the shell:
#
#     allocmoe simulate --config cfg.json --avg-k 3 --out run/
