"""Reward recovery from highway driving demonstrations.

A deterministic top-down highway simulator with binned range sensors, a
from-scratch Q-network learner, and a projection-based inverse reinforcement
learning loop that recovers linear reward weights from recorded expert
driving, validated against exact tabular oracles.
"""

from .dqn import GreedyQPolicy, NetworkParams, TrainSchedule, train_dqn
from .evaluate import EvalReport, evaluate_policy, mu_diff_table
from .expert import Demonstration, ScriptedExpertPolicy, ingest_demonstration, record_demonstrations
from .features import (
    HighwayEnv,
    RandomPolicy,
    bin_index,
    collect_rollout,
    discounted_feature_sum,
    estimate_feature_expectations,
    featurize,
    reward,
)
from .irl import (
    DQNSolver,
    ExactSolver,
    IRLConfig,
    IRLResult,
    ProjectionIRL,
    project_mu_bar,
    run_irl,
    run_irl_exact,
    update_weights,
)
from .tabular import TabularMDP, builtin_mdp, exact_feature_expectations, value_iteration
from .world import (
    Scenario,
    SteerAction,
    Terminal,
    VehicleState,
    WorldConfig,
    spawn_scenario,
    step_vehicle,
    step_world,
)

__all__ = [
    "Demonstration",
    "DQNSolver",
    "EvalReport",
    "ExactSolver",
    "GreedyQPolicy",
    "HighwayEnv",
    "IRLConfig",
    "IRLResult",
    "NetworkParams",
    "ProjectionIRL",
    "RandomPolicy",
    "Scenario",
    "ScriptedExpertPolicy",
    "SteerAction",
    "TabularMDP",
    "Terminal",
    "TrainSchedule",
    "VehicleState",
    "WorldConfig",
    "bin_index",
    "builtin_mdp",
    "collect_rollout",
    "discounted_feature_sum",
    "estimate_feature_expectations",
    "evaluate_policy",
    "exact_feature_expectations",
    "featurize",
    "ingest_demonstration",
    "mu_diff_table",
    "project_mu_bar",
    "record_demonstrations",
    "reward",
    "run_irl",
    "run_irl_exact",
    "spawn_scenario",
    "step_vehicle",
    "step_world",
    "train_dqn",
    "update_weights",
    "value_iteration",
]

__version__ = "0.1.0"
