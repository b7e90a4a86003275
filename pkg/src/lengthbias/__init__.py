"""Desk-scale RLVR lab: GRPO, GSPO and LUSPO objectives on a tabular policy."""

__version__ = "0.1.0"

from .advantage import Group, Trajectory, compute_advantages
from .objectives import (
    Algorithm,
    ObjectiveConfig,
    ObjectiveReport,
    clip_ratio,
    evaluate_objective,
    grpo_objective,
    gspo_objective,
    luspo_objective,
    objective_gradient,
    sequence_ratio,
    token_ratio,
)
from .policy import PolicyParams, Query, sample_response, sequence_log_prob, snapshot, token_log_prob
from .rewards import LengthPenaltyConfig, RewardBreakdown, overlong_reward, total_reward
from .trainer import TrainConfig, train

__all__ = [
    "Algorithm",
    "Group",
    "LengthPenaltyConfig",
    "ObjectiveConfig",
    "ObjectiveReport",
    "PolicyParams",
    "Query",
    "RewardBreakdown",
    "TrainConfig",
    "Trajectory",
    "clip_ratio",
    "compute_advantages",
    "evaluate_objective",
    "grpo_objective",
    "gspo_objective",
    "luspo_objective",
    "objective_gradient",
    "overlong_reward",
    "sample_response",
    "sequence_log_prob",
    "sequence_ratio",
    "snapshot",
    "token_log_prob",
    "token_ratio",
    "total_reward",
    "train",
]
