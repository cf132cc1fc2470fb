"""Expert-activation budget allocation for mixture-of-experts inference.

Layer level: sensitivity profiling plus an exact dynamic program over per-layer
Top-K budgets. Token level: redistribution of a layer's activation slots
toward tokens with flat routing distributions.
"""

__version__ = "0.1.0"

from .alloc_l import (
    DPTable,
    allocation_objective,
    brute_force_allocation,
    dp_complexity_estimate,
    optimal_allocation,
)
from .alloc_t import (
    RedistributionPlan,
    brute_force_redistribute,
    candidate_set,
    redistribute,
    retained_weight,
)
from .baselines import (
    CalibrationResult,
    ascending_allocation,
    calibrate_layers,
    calibrate_naee,
    calibrate_top_p,
    descending_allocation,
    naee_route,
    top_p_route,
    uniform_allocation,
)
from .budget import (
    AllocationVector,
    BudgetSpec,
    LayerTokenBudget,
    Violation,
    budget_from_avg,
    validate_allocation,
)
from .errors import (
    AllocMoEError,
    BudgetError,
    InfeasibleBudgetError,
    InstanceTooLargeError,
    InvalidInputError,
    OracleError,
)
from .metrics import (
    CostModel,
    ExpertLoad,
    compare_loads,
    entropy_allocation_correlation,
    expert_load,
    js_divergence,
    normalized_entropy,
    spearman,
    speedup_estimate,
)
from .routing import (
    ActivationMask,
    ToyExpertBank,
    gate_softmax,
    token_routing_entropy,
    top_k_route,
    toy_moe_forward,
)
from .sensitivity import (
    CountingOracle,
    SensitivityMatrix,
    normalize_rows,
    profile_sensitivity,
)
from .sim import (
    PipelineReport,
    SimConfig,
    gen_gate_logits,
    gen_scores,
    run_pipeline,
    synthetic_loss_oracle,
    write_report,
)
