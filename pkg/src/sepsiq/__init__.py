"""Offline conservative Q-learning engine for septic treatment policies."""

from .clinical import (
    DoseAction,
    DoseBinners,
    FeatureSchema,
    QuartileBinner,
    RewardParams,
    SofaGroup,
    action_index,
    dose_to_bin,
    fit_bins,
    index_to_action,
    intermediate_reward,
    sofa_group,
    terminal_reward,
)
from .cql import LossBreakdown, cql_penalty, logsumexp, total_loss
from .data import (
    NormStats,
    OfflineDataset,
    SplitSpec,
    TransitionRecord,
    fit_norm_stats,
    normalize,
    sample_minibatch,
    split,
)
from .qnet import (
    DuelingQNet,
    TargetNet,
    build_qnet,
    double_dqn_target,
    greedy_action,
    q_values,
    sync_target,
)
from .sim import SimParams, Trajectory, behavior_action, generate_cohort
from .train import TrainConfig, train_offline, validation_metrics

__version__ = "0.1.0"

__all__ = [
    "DoseAction",
    "DoseBinners",
    "DuelingQNet",
    "FeatureSchema",
    "LossBreakdown",
    "NormStats",
    "OfflineDataset",
    "QuartileBinner",
    "RewardParams",
    "SimParams",
    "SofaGroup",
    "SplitSpec",
    "TargetNet",
    "TrainConfig",
    "Trajectory",
    "TransitionRecord",
    "action_index",
    "behavior_action",
    "build_qnet",
    "cql_penalty",
    "dose_to_bin",
    "double_dqn_target",
    "fit_bins",
    "fit_norm_stats",
    "generate_cohort",
    "greedy_action",
    "index_to_action",
    "intermediate_reward",
    "logsumexp",
    "normalize",
    "q_values",
    "sample_minibatch",
    "sofa_group",
    "split",
    "sync_target",
    "terminal_reward",
    "total_loss",
    "train_offline",
    "validation_metrics",
]
