"""Controllers: random, exhaustive oracle, UCB, Neural epsilon-greedy and DQN.

Every agent exposes the same loop surface:

* ``act(observation, explore, rng)`` returns an action index;
* ``record(observation, action, reward, next_observation)`` stores feedback;
* ``train_tick(step)`` runs whatever update is due at 1-based step ``step``.

``required_observation_mode`` tells the harness what ``observation`` must be:
an :class:`~risorch.environment.Observation` vector, nothing, or the raw
:class:`~risorch.geometry_channel.ChannelSet` for the oracle.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .environment import ActionSpace, Observation, RewardSpec, action_reward
from .geometry_channel import ChannelSet, ConfigError
from .neural import Network, ShapeError, adam_step, masked_mse_loss

DEFAULT_CLIP = (-1000.0, 1000.0)


def _vector(observation) -> np.ndarray:
    if isinstance(observation, Observation):
        return observation.data
    return np.asarray(observation, dtype=float)


class Agent:
    kind = "base"
    required_observation_mode = "none"

    def __init__(self, n_actions: int, seed=None):
        if n_actions < 1:
            raise ConfigError("an agent needs at least one action")
        self.n_actions = int(n_actions)
        self.rng = np.random.default_rng(seed)

    def prepare(self, env, rng) -> None:
        """Hook run once before training; most agents need nothing."""

    def act(self, observation, explore: bool = True, rng=None) -> int:
        raise NotImplementedError

    def record(self, observation, action: int, reward: float, next_observation=None) -> None:
        pass

    def train_tick(self, step: int) -> None:
        pass

    def scalar_state(self) -> dict:
        return {"kind": self.kind, "n_actions": self.n_actions}

    def save_checkpoint(self, directory) -> Path:
        """Write network blobs (if any) plus a JSON sidecar with scalar state."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, net in self.networks().items():
            net.save(directory / f"{name}.json")
        sidecar = directory / "agent.json"
        sidecar.write_text(json.dumps(self.scalar_state(), sort_keys=True, indent=1))
        return sidecar

    def networks(self) -> dict[str, Network]:
        return {}


def random_act(n_actions: int, rng: np.random.Generator) -> int:
    """Uniform draw from ``[0, n_actions)``."""
    if n_actions < 1:
        raise ConfigError("empty action space")
    return int(rng.integers(n_actions))


class RandomAgent(Agent):
    kind = "random"

    def act(self, observation=None, explore=True, rng=None):
        return random_act(self.n_actions, rng if rng is not None else self.rng)


def exhaustive_best_action(channels: ChannelSet, space: ActionSpace, spec: RewardSpec) -> tuple[int, float]:
    """Evaluate every action on ``channels``; lowest index wins ties."""
    best_index, best_reward = 0, -np.inf
    for action in _decoded_actions(space):
        r = action_reward(channels, action, spec)
        if r > best_reward:
            best_index, best_reward = action.index, r
    return best_index, float(best_reward)


def _decoded_actions(space: ActionSpace):
    cache = getattr(space, "_decoded_cache", None)
    if cache is None:
        cache = [space.decode(i) for i in range(space.cardinality)]
        space._decoded_cache = cache
    return cache


class OptimalAgent(Agent):
    kind = "optimal"
    required_observation_mode = "oracle_channels"

    def __init__(self, space: ActionSpace, reward: RewardSpec, seed=None):
        super().__init__(space.cardinality, seed)
        self.space = space
        self.reward_spec = reward

    def act(self, observation, explore=True, rng=None):
        if not isinstance(observation, ChannelSet):
            raise ConfigError("the optimal agent needs the full channel set")
        return exhaustive_best_action(observation, self.space, self.reward_spec)[0]


class UcbAgent(Agent):
    """Observation-free UCB over the joint action set.

    Running means start at random values (so that the zero-count arms, whose
    confidence bonus is zero, still get ranked); the first real reward of an
    arm overwrites its random start.
    """

    kind = "ucb"

    def __init__(self, n_actions: int, confidence_width: float = 0.6, seed=None):
        super().__init__(n_actions, seed)
        if confidence_width < 0:
            raise ConfigError("confidence width must be non-negative")
        self.c = float(confidence_width)
        self.means = np.zeros(self.n_actions)
        self.counts = np.zeros(self.n_actions, dtype=np.int64)
        self.initialized = False

    @property
    def step(self) -> int:
        return int(self.counts.sum())

    def initialize_means(self, probe_reward: float, rng=None) -> None:
        rng = rng if rng is not None else self.rng
        lo, hi = sorted((0.0, float(probe_reward)))
        self.means = rng.uniform(lo, hi, self.n_actions) if hi > lo else np.full(self.n_actions, lo)
        self.counts[:] = 0
        self.initialized = True

    def prepare(self, env, rng):
        if self.initialized:
            return
        reward, _, _ = env.step(random_act(self.n_actions, rng))
        self.initialize_means(reward, rng)

    def scores(self) -> np.ndarray:
        t = self.step
        bonus = np.zeros(self.n_actions)
        pulled = self.counts > 0
        if t > 0 and self.c > 0:
            bonus[pulled] = self.c * np.sqrt(np.log(t) / self.counts[pulled])
        return self.means + bonus

    def select(self) -> int:
        return int(np.argmax(self.scores()))

    def act(self, observation=None, explore=True, rng=None):
        if explore:
            return self.select()
        return int(np.argmax(self.means))

    def update(self, action: int, reward: float) -> None:
        self.counts[action] += 1
        n = self.counts[action]
        # n == 1 replaces the random start exactly
        self.means[action] = reward if n == 1 else self.means[action] + (reward - self.means[action]) / n

    def record(self, observation, action, reward, next_observation=None):
        self.update(action, reward)

    def scalar_state(self):
        return {**super().scalar_state(), "c": self.c, "means": self.means.tolist(),
                "counts": self.counts.tolist(), "initialized": self.initialized}


def ucb_select(agent: UcbAgent) -> int:
    return agent.select()


def ucb_update(agent: UcbAgent, action: int, reward: float) -> UcbAgent:
    agent.update(action, reward)
    return agent


class _NetworkPolicy(Agent):
    required_observation_mode = "full_csi"

    def __init__(self, network: Network, n_actions: int, epsilon: float, learning_rate: float,
                 observation_mode: str = "full_csi", seed=None):
        super().__init__(n_actions, seed)
        if network.output_dim != n_actions:
            raise ConfigError("network output size must equal the number of actions")
        if not 0.0 <= epsilon <= 1.0:
            raise ConfigError("epsilon must lie in [0, 1]")
        if observation_mode not in ("full_csi", "partial_aod"):
            raise ConfigError(f"{self.kind} needs CSI or AoD observations, not {observation_mode!r}")
        self.network = network
        self.epsilon = float(epsilon)
        self.learning_rate = float(learning_rate)
        self.required_observation_mode = observation_mode

    def act(self, observation, explore=True, rng=None):
        rng = rng if rng is not None else self.rng
        x = _vector(observation)
        if x.size != self.network.input_dim:
            raise ShapeError(f"observation has {x.size} entries, network expects {self.network.input_dim}")
        if explore and rng.random() < self.epsilon:
            return random_act(self.n_actions, rng)
        return int(np.argmax(self.network.predict(x)))


class NeuralEpsilonGreedyAgent(_NetworkPolicy):
    """Contextual bandit with a reward-prediction network.

    Experiences are collected for ``batch_size`` steps, then the network takes
    one Adam step on the summed masked squared error of that batch and the
    batch is discarded.
    """

    kind = "neural_eg"

    def __init__(self, network: Network, n_actions: int, epsilon: float = 0.3, batch_size: int = 32,
                 learning_rate: float = 0.001, observation_mode: str = "full_csi", seed=None):
        super().__init__(network, n_actions, epsilon, learning_rate, observation_mode, seed)
        if batch_size < 1:
            raise ConfigError("batch size must be positive")
        self.batch_size = int(batch_size)
        self.batch: list[tuple[np.ndarray, int, float]] = []

    def record(self, observation, action, reward, next_observation=None):
        self.batch.append((_vector(observation), int(action), float(reward)))

    def train_tick(self, step):
        if len(self.batch) >= self.batch_size:
            self.train(self.batch)

    def batch_loss(self, batch, training=False) -> float:
        x = np.stack([b[0] for b in batch])
        pred = self.network.forward(x, training=training)
        return masked_mse_loss(pred, [b[1] for b in batch], [b[2] for b in batch])[0]

    def train(self, batch) -> float:
        """One Adam step on ``batch``; returns the pre-update loss and clears the batch."""
        x = np.stack([b[0] for b in batch])
        actions = np.array([b[1] for b in batch])
        targets = np.array([b[2] for b in batch])
        pred = self.network.forward(x, training=True)
        loss, seed = masked_mse_loss(pred, actions, targets)
        grads = self.network.backward(seed)
        adam_step(self.network, grads, self.learning_rate)
        if batch is self.batch:
            self.batch = []
        return loss

    def networks(self):
        return {"reward_network": self.network}

    def scalar_state(self):
        return {**super().scalar_state(), "epsilon": self.epsilon, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "pending": len(self.batch)}


def neural_eg_train(agent: NeuralEpsilonGreedyAgent, batch) -> NeuralEpsilonGreedyAgent:
    agent.train(batch)
    return agent


class ReplayBuffer:
    """Bounded FIFO of ``(s, a, r[, s'])`` tuples backed by preallocated arrays."""

    def __init__(self, capacity: int, store_next_state: bool = True, dtype=np.float32):
        if capacity < 1:
            raise ConfigError("replay capacity must be positive")
        self.capacity = int(capacity)
        self.store_next_state = store_next_state
        self.dtype = dtype
        self._obs = self._next = None
        self.actions = np.zeros(self.capacity, dtype=np.int64)
        self.rewards = np.zeros(self.capacity)
        self._cursor = 0
        self._size = 0

    def __len__(self):
        return self._size

    def add(self, obs, action, reward, next_obs=None):
        obs = np.asarray(obs)
        if self._obs is None:
            self._obs = np.zeros((self.capacity, obs.size), dtype=self.dtype)
            if self.store_next_state:
                self._next = np.zeros_like(self._obs)
        i = self._cursor
        self._obs[i] = obs
        if self.store_next_state:
            if next_obs is None:
                raise ValueError("this buffer stores next states")
            self._next[i] = np.asarray(next_obs)
        self.actions[i] = action
        self.rewards[i] = reward
        self._cursor = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.integers(self._size, size=batch_size)
        nxt = self._next[idx] if self.store_next_state else None
        return self._obs[idx], self.actions[idx], self.rewards[idx], nxt

    @property
    def observations(self):
        return self._obs[:self._size]

    @property
    def next_observations(self):
        return None if self._next is None else self._next[:self._size]


class DqnAgent(_NetworkPolicy):
    """DQN with replay, soft target updates and elementwise gradient clipping.

    With ``discounted=False`` every step is its own episode and the target is
    the observed reward; otherwise the target network bootstraps
    ``r + gamma * max_a Q_target(s', a)``.
    """

    kind = "dqn"

    def __init__(self, network: Network, n_actions: int, epsilon: float = 0.3, learning_rate: float = 0.002,
                 batch_size: int = 128, buffer_capacity: int = 50_000, target_update_interval: int = 100,
                 target_temperature: float = 0.18, gradient_clip=DEFAULT_CLIP, discounted: bool = False,
                 gamma: float = 0.99, store_next_state: bool | None = None,
                 observation_mode: str = "full_csi", seed=None):
        super().__init__(network, n_actions, epsilon, learning_rate, observation_mode, seed)
        if not 0.0 <= target_temperature <= 1.0:
            raise ConfigError("target temperature must lie in [0, 1]")
        if target_update_interval < 1 or batch_size < 1:
            raise ConfigError("batch size and target interval must be positive")
        if store_next_state is None:
            store_next_state = discounted
        if discounted and not store_next_state:
            raise ConfigError("discounted targets need stored next states")
        self.target_network = network.copy()
        self.batch_size = int(batch_size)
        self.target_update_interval = int(target_update_interval)
        self.tau = float(target_temperature)
        self.gradient_clip = tuple(gradient_clip) if gradient_clip is not None else None
        self.discounted = bool(discounted)
        self.gamma = float(gamma)
        self.buffer = ReplayBuffer(buffer_capacity, store_next_state, dtype=network.dtype)
        self.updates = 0

    def record(self, observation, action, reward, next_observation=None):
        nxt = _vector(next_observation) if self.buffer.store_next_state else None
        self.buffer.add(_vector(observation), action, reward, nxt)

    def targets(self, rewards, next_obs) -> np.ndarray:
        if not self.discounted:
            return np.asarray(rewards, dtype=float)
        q_next = self.target_network.forward(next_obs, training=False)
        return rewards + self.gamma * q_next.max(axis=1)

    def loss_on(self, obs, actions, rewards, next_obs, training=False) -> float:
        pred = self.network.forward(obs, training=training)
        return masked_mse_loss(pred, actions, self.targets(rewards, next_obs))[0]

    def train_step(self, rng=None) -> float | None:
        """Sample a minibatch and take one clipped Adam step; ``None`` if the buffer is too small."""
        if len(self.buffer) < self.batch_size:
            return None
        rng = rng if rng is not None else self.rng
        obs, actions, rewards, next_obs = self.buffer.sample(self.batch_size, rng)
        targets = self.targets(rewards, next_obs)
        pred = self.network.forward(obs, training=True)
        loss, seed = masked_mse_loss(pred, actions, targets)
        grads = self.network.backward(seed)
        adam_step(self.network, grads, self.learning_rate, clip=self.gradient_clip)
        self.updates += 1
        return loss

    def target_update(self) -> None:
        self.target_network.parameters *= (1.0 - self.tau)
        self.target_network.parameters += self.tau * self.network.parameters

    def train_tick(self, step):
        self.train_step()
        if step % self.target_update_interval == 0:
            self.target_update()

    def networks(self):
        return {"q_network": self.network, "target_network": self.target_network}

    def scalar_state(self):
        return {**super().scalar_state(), "epsilon": self.epsilon, "batch_size": self.batch_size,
                "learning_rate": self.learning_rate, "tau": self.tau, "gamma": self.gamma,
                "discounted": self.discounted, "updates": self.updates, "buffer": len(self.buffer)}


def dqn_train_step(agent: DqnAgent, rng=None) -> DqnAgent:
    agent.train_step(rng)
    return agent


def dqn_target_update(agent: DqnAgent) -> DqnAgent:
    agent.target_update()
    return agent
