from __future__ import annotations

import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blueprint_rl.grpo import (
    CENTERED,
    NORMALIZED_THRESHOLDED,
    RolloutGroup,
    RolloutLogProbs,
    centered_advantages,
    compute_advantages,
    k3_kl,
    surrogate_objective,
    thresholded_advantages,
)

from oracles import thresholded_bruteforce


def close(a, b, tol=1e-12):
    return len(a) == len(b) and all(abs(x - y) <= tol for x, y in zip(a, b))


def test_centered_examples():
    assert centered_advantages([1, 1, 1]).values == (0.0, 0.0, 0.0)
    assert centered_advantages([1, 0]).values == (0.5, -0.5)
    assert close(centered_advantages([2.3, 1.0, 0.0, 2.3]).values, [0.9, -0.4, -1.4, 0.9])


def test_centered_single_rollout():
    assert centered_advantages([3.0]).values == (0.0,)


def test_thresholded_examples():
    assert thresholded_advantages([2, 2, 2, 2]).values == (0.0,) * 4
    assert thresholded_advantages([1, 0, 0, 1, 1, 0, 1, 0]).values == (1, -1, -1, 1, 1, -1, 1, -1)
    v = thresholded_advantages([1, 1, 1, 0]).values
    assert v[:3] == (0.0, 0.0, 0.0)
    assert v[3] == pytest.approx(-math.sqrt(3), abs=1e-12)
    assert round(v[3], 4) == -1.7321


def test_thresholded_two_rollouts_always_unit():
    rng = random.Random(8)
    for _ in range(500):
        a, b = rng.uniform(-3, 3), rng.uniform(-3, 3)
        if a != b:
            v = thresholded_advantages([a, b]).values
            assert sorted(v) == [-1.0, 1.0]


def test_thresholded_rejects_singleton():
    with pytest.raises(ValueError):
        thresholded_advantages([1.0])


def test_tiny_spread_below_floor_is_zero():
    assert thresholded_advantages([1.0, 1.0 + 1e-12]).values == (0.0, 0.0)


def test_compute_dispatch():
    assert compute_advantages([1, 0], CENTERED).mode == CENTERED
    assert compute_advantages([1, 0]).mode == NORMALIZED_THRESHOLDED
    with pytest.raises(ValueError):
        compute_advantages([1, 0], "whitened")


def test_rollout_group_validation():
    with pytest.raises(ValueError):
        RolloutGroup(())
    with pytest.raises(ValueError):
        RolloutGroup((1.0, float("inf")))


def test_thresholded_matches_bruteforce():
    rng = random.Random(2024)
    for _ in range(2000):
        g = rng.randint(2, 16)
        if rng.random() < 0.5:
            rewards = [rng.choice([0.0, 0.5, 1.0, 1.5, 2.0, 2.3, 3.0]) for _ in range(g)]
        else:
            rewards = [rng.uniform(-1, 4) for _ in range(g)]
        got = thresholded_advantages(rewards).values
        assert close(got, thresholded_bruteforce(rewards))
        assert all(v == 0.0 or abs(v) >= 1.0 for v in got)


grid_rewards = st.lists(st.integers(-12, 16).map(lambda v: v / 4), min_size=2, max_size=16)


@settings(max_examples=300, deadline=None)
@given(grid_rewards, st.integers(-8, 8))
def test_shift_invariance(rewards, c):
    shifted = [r + c for r in rewards]
    assert close(centered_advantages(shifted).values, centered_advantages(rewards).values, 1e-9)
    assert close(thresholded_advantages(shifted).values, thresholded_advantages(rewards).values, 1e-9)


@settings(max_examples=300, deadline=None)
@given(grid_rewards, st.sampled_from([0.25, 0.5, 2.0, 4.0, 3.0, 0.7]))
def test_scale_behavior(rewards, c):
    scaled = [r * c for r in rewards]
    base = centered_advantages(rewards).values
    assert close(centered_advantages(scaled).values, [c * v for v in base], 1e-9)
    if c in (0.25, 0.5, 2.0, 4.0):  # exact in binary, so ties survive scaling
        assert close(thresholded_advantages(scaled).values, thresholded_advantages(rewards).values, 1e-9)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=32))
def test_centered_zero_sum(rewards):
    assert abs(math.fsum(centered_advantages(rewards).values)) <= 1e-12


# -- surrogate ---------------------------------------------------------------


def one(cur, old, ref=None, adv=1.0):
    return RolloutLogProbs(cur, old, cur if ref is None else ref, adv)


def test_surrogate_ratio_one():
    lp = [-0.5, -1.2, -0.1]
    assert surrogate_objective([one(lp, lp), one(lp[:1], lp[:1])]) == -1.0


def test_surrogate_zero_advantage():
    assert surrogate_objective([one([-0.3, -0.2], [-1.0, -0.1], adv=0.0)]) == 0.0


def test_surrogate_single_token_clip():
    loss = surrogate_objective([one([math.log(2.0) - 1.0], [-1.0])], epsilon=0.2)
    assert abs(loss - (-1.2)) <= 1e-12


def test_surrogate_negative_advantage_uses_pessimistic_branch():
    # rho = 0.5, A = -1: min(-0.5, -0.8) = -0.8
    loss = surrogate_objective([one([math.log(0.5)], [0.0], adv=-1.0)])
    assert loss == pytest.approx(0.8, abs=1e-12)


def test_surrogate_misaligned():
    with pytest.raises(ValueError, match="rollout 1"):
        surrogate_objective([one([0.0], [0.0]), RolloutLogProbs([0.0, 0.0], [0.0], [0.0, 0.0], 1.0)])


def test_surrogate_kl_term():
    cur, ref = [-1.0, -2.0], [-1.5, -1.0]
    expected_kl = float(np.mean([math.exp(r - c) - (r - c) - 1 for c, r in zip(cur, ref)]))
    loss = surrogate_objective([one(cur, cur, ref, adv=0.0)], beta=0.1)
    assert loss == pytest.approx(0.1 * expected_kl, abs=1e-12)


lp_st = st.floats(-8, 0, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(lp_st, lp_st), min_size=1, max_size=20), st.floats(0.05, 0.5))
def test_clipping_bound_positive_advantage(pairs, eps):
    cur = [c for c, _ in pairs]
    old = [o for _, o in pairs]
    for c, o in pairs:
        per_token = -surrogate_objective([one([c], [o], adv=1.0)], epsilon=eps)
        assert per_token <= 1 + eps + 1e-12
    assert -surrogate_objective([one(cur, old, adv=1.0)], epsilon=eps) <= 1 + eps + 1e-12


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(lp_st, lp_st), min_size=1, max_size=20))
def test_k3_non_negative(pairs):
    cur = np.array([c for c, _ in pairs])
    ref = np.array([r for _, r in pairs])
    assert (k3_kl(cur, ref) >= 0).all()
