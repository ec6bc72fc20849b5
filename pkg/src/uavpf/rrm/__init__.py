from .core import (
    DualState,
    InfeasibleError,
    NonConvergenceError,
    RrmError,
    RrmSolution,
    SnapshotInput,
    WaterfillWeights,
    audit_solution,
    dual_objective,
    max_sinr_rrm,
    pc_closed_form,
    ra_dual_step,
    ra_kkt,
    ra_optimize,
    ra_subgradient,
    rates,
    rrm_evaluate,
    slot_reward,
    user_association,
    waterfill_bandwidth,
    waterfill_objective,
)

__all__ = [
    "DualState",
    "InfeasibleError",
    "NonConvergenceError",
    "RrmError",
    "RrmSolution",
    "SnapshotInput",
    "WaterfillWeights",
    "audit_solution",
    "dual_objective",
    "max_sinr_rrm",
    "pc_closed_form",
    "ra_dual_step",
    "ra_kkt",
    "ra_optimize",
    "ra_subgradient",
    "rates",
    "rrm_evaluate",
    "slot_reward",
    "user_association",
    "waterfill_bandwidth",
    "waterfill_objective",
]
