"""Training-side machinery for blueprint-based spatial reasoning.

Trace parsing, rewards, GRPO advantages, MCTS trace synthesis and
anti-shortcut augmentation, checked against a synthetic geometry oracle.
"""
__version__ = "0.1.0"

from .geometry import area, cluster_distinct, iou
from .grpo import centered_advantages, compute_advantages, surrogate_objective, thresholded_advantages
from .rewards import (
    ConsistencyInputs,
    ReferenceCount,
    RewardBreakdown,
    RewardConfig,
    extract_reference_count,
    reward_accuracy,
    reward_cardinality,
    reward_consistency,
    reward_format,
    total_reward,
)
from .trace import (
    Blueprint,
    BlueprintObject,
    BoundingBox,
    ParseReport,
    ReasoningTrace,
    extract_answer,
    parse_trace,
    render_trace,
)

__all__ = [
    "Blueprint",
    "BlueprintObject",
    "BoundingBox",
    "ConsistencyInputs",
    "ParseReport",
    "ReasoningTrace",
    "ReferenceCount",
    "RewardBreakdown",
    "RewardConfig",
    "area",
    "centered_advantages",
    "cluster_distinct",
    "compute_advantages",
    "extract_answer",
    "extract_reference_count",
    "iou",
    "parse_trace",
    "render_trace",
    "reward_accuracy",
    "reward_cardinality",
    "reward_consistency",
    "reward_format",
    "surrogate_objective",
    "thresholded_advantages",
    "total_reward",
]
