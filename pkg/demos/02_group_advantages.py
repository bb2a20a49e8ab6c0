"""
Group-relative advantages
=========================

Eight sibling rollouts of one prompt, scored, then turned into advantages.
The thresholded mode divides by the group std and zeroes every rollout whose
reward sits within one std of the mean.
"""
import math

from blueprint_rl.grpo import RolloutLogProbs, centered_advantages, surrogate_objective, thresholded_advantages

rewards = [2.3, 1.0, 0.0, 2.3, 2.0, 1.0, 2.3, 0.5]
print("centered   ", [round(v, 3) for v in centered_advantages(rewards).values])
print("thresholded", [round(v, 3) for v in thresholded_advantages(rewards).values])

# %%
# A group where everybody agrees carries no signal at all.
print("constant   ", thresholded_advantages([1.5] * 8).values)

# %%
# The clipped surrogate: a token whose probability doubled under the new
# policy only earns 1 + eps when its advantage is positive.
doubled = RolloutLogProbs(logp_current=[math.log(0.4)], logp_old=[math.log(0.2)], logp_ref=[math.log(0.2)], advantage=1.0)
print("loss, beta=0   ", surrogate_objective([doubled]))
print("loss, beta=0.04", surrogate_objective([doubled], beta=0.04))
