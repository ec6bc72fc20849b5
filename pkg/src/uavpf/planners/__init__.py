from .core import (
    KINDS,
    PlannerConfig,
    PlannerError,
    SizeGuardError,
    SlotEvaluator,
    Trajectory,
    circular_path,
    circular_plan,
    count_trajectories,
    decode,
    dfs_plan,
    encode,
    exhaustive_plan,
    fixed_plan,
    frozen_value,
    ga_iter_plan,
    ga_tp_plan,
    is_feasible_chain,
    orbit_point,
    plan,
    random_path,
    run_ga,
)

__all__ = [
    "KINDS",
    "PlannerConfig",
    "PlannerError",
    "SizeGuardError",
    "SlotEvaluator",
    "Trajectory",
    "circular_path",
    "circular_plan",
    "count_trajectories",
    "decode",
    "dfs_plan",
    "encode",
    "exhaustive_plan",
    "fixed_plan",
    "frozen_value",
    "ga_iter_plan",
    "ga_tp_plan",
    "is_feasible_chain",
    "orbit_point",
    "plan",
    "random_path",
    "run_ga",
]
