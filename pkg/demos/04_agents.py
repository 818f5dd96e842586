"""
Controllers side by side
========================

Random choice, UCB on the action set, and the two network learners
(epsilon-greedy reward prediction and DQN) each get the same short training
run on the 16-action problem, then act greedily on shared evaluation draws.
"""

from risorch.harness import ExperimentConfig, run_experiment

base = ExperimentConfig().with_values(trials=1, eval_steps=100)

for kind in ("random", "ucb", "neural_eg", "dqn", "optimal"):
    config = base.with_values(**{"agent.kind": kind})
    table = run_experiment(config, threads=1)
    trial = table.trials[0]
    print(f"{kind:>10}: {config.resolved_training_steps:4d} training steps, mean {table.mean:.3f} bps/Hz, "
          f"{table.normalized_ratio:.3f} of optimal")
