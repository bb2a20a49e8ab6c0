"""Group-relative advantages and the clipped surrogate objective."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

CENTERED = "centered"
NORMALIZED_THRESHOLDED = "normalized_thresholded"
ADVANTAGE_MODES = (CENTERED, NORMALIZED_THRESHOLDED)

DEFAULT_STD_FLOOR = 1e-8
DEFAULT_EPSILON = 0.2


@dataclass(frozen=True)
class RolloutGroup:
    rewards: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "rewards", tuple(float(r) for r in self.rewards))
        if not self.rewards:
            raise ValueError("a rollout group needs at least one reward")
        if not all(math.isfinite(r) for r in self.rewards):
            raise ValueError("rewards must be finite")

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass(frozen=True)
class AdvantageVector:
    values: tuple[float, ...]
    mode: str


def _as_group(group: RolloutGroup | Sequence[float]) -> RolloutGroup:
    return group if isinstance(group, RolloutGroup) else RolloutGroup(tuple(group))


def centered_advantages(group: RolloutGroup | Sequence[float]) -> AdvantageVector:
    rewards = _as_group(group).rewards
    # exact mean, so a constant group centers to exact zeros
    mean = float(sum(map(Fraction, rewards)) / len(rewards))
    return AdvantageVector(tuple(r - mean for r in rewards), CENTERED)


def thresholded_advantages(
    group: RolloutGroup | Sequence[float], std_floor: float = DEFAULT_STD_FLOOR
) -> AdvantageVector:
    """Std-normalized advantages with small deviations zeroed.

    Entries whose deviation from the group mean is smaller than one population
    standard deviation become 0. The keep/zero decision is made in exact
    rational arithmetic (``dev**2 >= var``) so that structural ties, such as
    every two-rollout group, are never decided by rounding noise.
    """
    rewards = _as_group(group).rewards
    g = len(rewards)
    if g < 2:
        raise ValueError("thresholded advantages need a group of at least 2 rollouts")
    exact = [Fraction(r) for r in rewards]
    mean = sum(exact) / g
    devs = [r - mean for r in exact]
    var = sum(d * d for d in devs) / g
    std = math.sqrt(float(var))
    if std < std_floor or var == 0:
        return AdvantageVector((0.0,) * g, NORMALIZED_THRESHOLDED)
    values = []
    for d in devs:
        ratio = d * d / var
        if ratio >= 1:
            # float(ratio) >= 1.0 exactly, so |value| >= 1 holds after rounding too
            values.append(math.copysign(math.sqrt(float(ratio)), d))
        else:
            values.append(0.0)
    return AdvantageVector(tuple(values), NORMALIZED_THRESHOLDED)


def compute_advantages(
    group: RolloutGroup | Sequence[float],
    mode: str = NORMALIZED_THRESHOLDED,
    std_floor: float = DEFAULT_STD_FLOOR,
) -> AdvantageVector:
    if mode == CENTERED:
        return centered_advantages(group)
    if mode == NORMALIZED_THRESHOLDED:
        return thresholded_advantages(group, std_floor)
    raise ValueError(f"unknown advantage mode {mode!r}; expected one of {ADVANTAGE_MODES}")


@dataclass(frozen=True)
class RolloutLogProbs:
    """Aligned per-token log-probabilities for one rollout plus its advantage."""

    logp_current: Sequence[float]
    logp_old: Sequence[float]
    logp_ref: Sequence[float]
    advantage: float


def k3_kl(logp_current: np.ndarray, logp_ref: np.ndarray) -> np.ndarray:
    """Per-token k3 estimate of KL(current || ref); non-negative."""
    log_ratio = logp_ref - logp_current
    # expm1 avoids cancellation near zero; the clamp absorbs the last ulp
    return np.maximum(np.expm1(log_ratio) - log_ratio, 0.0)


def surrogate_objective(
    rollouts: Sequence[RolloutLogProbs],
    epsilon: float = DEFAULT_EPSILON,
    beta: float = 0.0,
) -> float:
    """Clipped GRPO loss, averaged per token within a rollout and then over the group."""
    if not rollouts:
        raise ValueError("surrogate objective needs at least one rollout")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if beta < 0:
        raise ValueError(f"beta must be non-negative, got {beta}")
    surrogate_terms = []
    kl_terms = []
    for i, ro in enumerate(rollouts):
        cur = np.asarray(ro.logp_current, dtype=np.float64)
        old = np.asarray(ro.logp_old, dtype=np.float64)
        ref = np.asarray(ro.logp_ref, dtype=np.float64)
        if not (cur.shape == old.shape == ref.shape) or cur.ndim != 1 or cur.size == 0:
            raise ValueError(
                f"rollout {i}: log-prob sequences misaligned "
                f"(current={cur.shape}, old={old.shape}, ref={ref.shape})"
            )
        ratio = np.exp(cur - old)
        unclipped = ratio * ro.advantage
        clipped = np.clip(ratio, 1.0 - epsilon, 1.0 + epsilon) * ro.advantage
        surrogate_terms.append(np.minimum(unclipped, clipped).mean())
        kl_terms.append(k3_kl(cur, ref).mean())
    loss = -float(np.mean(surrogate_terms))
    if beta:
        loss += beta * float(np.mean(kl_terms))
    return loss
