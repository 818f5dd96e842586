"""Simulation and online control of multi-RIS multi-user downlinks."""

from .agents import (DqnAgent, NeuralEpsilonGreedyAgent, OptimalAgent, RandomAgent, ReplayBuffer, UcbAgent,
                     exhaustive_best_action)
from .environment import (Action, ActionSpace, Observation, RewardSpec, RisEnvironment, action_space_for,
                          build_action_space, compute_sinrs, observe)
from .geometry_channel import (ChannelSet, ConfigError, RiceanConfig, SceneGeometry, draw_channel_set,
                               pathloss_attenuation, steering_vector)
from .harness import (ExperimentConfig, ResultsTable, TrialResult, emit_results, load_config,
                      measure_throughput, run_experiment)
from .neural import Network, build_reward_network, gradient_check

__version__ = "0.1.0"
