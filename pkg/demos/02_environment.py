"""
Actions, rewards and observations
=================================

A controller picks one phase per element group and one precoder per user.
Here we enumerate that action set, score actions on a channel draw and look
at what a learning agent gets to see.
"""

import numpy as np

from risorch.agents import exhaustive_best_action
from risorch.environment import (RewardSpec, RisEnvironment, action_reward, build_action_space, compute_sinrs,
                                 observe)
from risorch.geometry_channel import RiceanConfig, SceneGeometry, draw_channel_set

geometry = SceneGeometry.paper_default(32)
space = build_action_space(2, geometry.ris_shape, group_size=16, phase_bits=1, n_t=4, n_ues=2)
print("controllable groups:", space.n_control, "actions:", space.cardinality)

# index = phase pattern * (number of precoder pairs) + precoder pair
a = space.decode(13)
print("action 13 -> group phases", a.group_phases, "precoder choice", a.precoder_choice)
assert space.encode(a.group_phases, a.precoder_choice) == 13

spec = RewardSpec.from_dbm(40.0, -110.0)
channels = draw_channel_set(geometry, RiceanConfig(), np.random.default_rng(1))

rewards = np.array([action_reward(channels, space.decode(i), spec) for i in range(space.cardinality)])
print("sum rate per action (bps/Hz):")
print(rewards.reshape(-1, 4).round(3))
# without a direct path, flipping every phase at once leaves all rates unchanged
assert np.allclose(rewards[:4], rewards[-4:])
best, best_rate = exhaustive_best_action(channels, space, spec)
print("best action", best, "rate", round(best_rate, 3), "SINRs", compute_sinrs(channels, space.decode(best), spec))

# the rate-request variant scores -1 per unmet user
qos = RewardSpec.from_dbm(40.0, -110.0, mode="qos", rate_requests=(3.5, 3.5))
qos_rewards = [action_reward(channels, space.decode(i), qos) for i in range(space.cardinality)]
print("qos rewards:", np.round(qos_rewards, 2))

# observations: full channel state vs angles only
print("full CSI length:", observe(channels, "full_csi").dimension)
print("angle-only length:", observe(channels, "partial_aod").dimension)

# a short episode with a fixed action
env = RisEnvironment(geometry, RiceanConfig(), space, spec, rng=np.random.default_rng(2))
print("five steps of action", best, [round(env.step(best)[0], 3) for _ in range(5)])
