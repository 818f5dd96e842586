"""Experiment orchestration: configs, training/evaluation protocols, trials and result files.

A run is fully determined by an :class:`ExperimentConfig`. Trial ``i`` uses
the integer seed ``config.seed + i``; a :class:`numpy.random.SeedSequence`
built from that seed is split into independent streams for the training
channels, the evaluation channels, network initialization, exploration and
the UCB probe. Evaluation channels therefore depend on the trial only, so
every agent kind and the exhaustive baseline see the same draws.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
import time
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .agents import (Agent, DqnAgent, NeuralEpsilonGreedyAgent, OptimalAgent, RandomAgent, UcbAgent,
                     exhaustive_best_action)
from .environment import (ActionSpace, RewardSpec, RisEnvironment, action_reward, action_space_for,
                          observation_dimension, observe)
from .geometry_channel import (PAPER_BS_POSITION, PAPER_CARRIER_FREQUENCY, PAPER_RIS_POSITIONS,
                               PAPER_UE_POSITIONS, ConfigError, RiceanConfig, SceneGeometry, draw_channel_set,
                               ris_shape_for, static_terms)
from .neural import build_reward_network

AGENT_KINDS = ("random", "optimal", "ucb", "neural_eg", "dqn")
LEARNING_AGENTS = ("ucb", "neural_eg", "dqn")
NETWORK_AGENTS = ("neural_eg", "dqn")
THREADS_ENV = "RISORCH_THREADS"
CSV_COLUMNS = ("fingerprint", "agent", "n_tot", "card_A", "trial", "mean_reward", "normalized_ratio",
               "std", "steps_per_sec", "seed")
TRAINING_MULTIPLIER = 50

_AGENT_DEFAULTS = {
    "neural_eg": {"epsilon": 0.3, "learning_rate": 0.001, "batch_size": 32},
    "dqn": {"epsilon": 0.3, "learning_rate": 0.002, "batch_size": 128},
}


@dataclass(frozen=True)
class SceneConfig:
    bs_position: tuple[float, ...] = PAPER_BS_POSITION
    ris_positions: tuple[tuple[float, ...], ...] = PAPER_RIS_POSITIONS
    ue_positions: tuple[tuple[float, ...], ...] = PAPER_UE_POSITIONS
    carrier_frequency: float = PAPER_CARRIER_FREQUENCY
    element_spacing_ris: float = 0.5
    element_spacing_bs: float = 0.5
    bs_antennas: int = 4
    azimuth_convention: str = "paper"


@dataclass(frozen=True)
class RiceanSection:
    kappa_ris_bs: float = 1000.0
    kappa_ue_ris: float = 1000.0
    direct_attenuation: float = 0.0


@dataclass(frozen=True)
class RewardConfig:
    mode: str = "sum_rate"
    rate_requests: tuple[float, ...] = (0.4, 0.4)
    power_dbm: float = 40.0
    noise_dbm: float = -110.0
    report_noise_db: float = 0.0


@dataclass(frozen=True)
class AgentConfig:
    kind: str = "dqn"
    epsilon: float | None = None
    learning_rate: float | None = None
    batch_size: int | None = None
    confidence_width: float = 0.6
    network: str = "conv"
    dropout: float = 0.2
    buffer_capacity: int = 50_000
    target_update_interval: int = 100
    target_temperature: float = 0.18
    gradient_clip: tuple[float, ...] = (-1000.0, 1000.0)
    discounted: bool = False
    gamma: float = 0.99
    store_next_state: bool | None = None
    dtype: str = "float32"

    def resolved(self, name: str):
        value = getattr(self, name)
        if value is None:
            value = _AGENT_DEFAULTS.get(self.kind, {}).get(name)
        return value


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    ``training_steps = None`` means 50 steps per action for the learning
    agents and none for the baselines. ``observation_mode = auto`` picks the
    mode the agent needs (full CSI for the networks).
    """

    scene: SceneConfig = field(default_factory=SceneConfig)
    ricean: RiceanSection = field(default_factory=RiceanSection)
    reward: RewardConfig = field(default_factory=RewardConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    n_tot: int = 32
    n_group: int = 16
    phase_bits: int = 1
    observation_mode: str = "auto"
    scenario: str = "iid_static"
    training_steps: int | None = None
    eval_steps: int = 300
    trials: int = 5
    eval_intervals: int = 15
    seed: int = 0
    dt: float = 0.006
    record_timing: bool = False
    checkpoint_dir: str | None = None
    output_path: str | None = None

    def __post_init__(self):
        validate_config(self)

    # derived objects -------------------------------------------------------
    def geometry(self) -> SceneGeometry:
        s = self.scene
        n_ris = len(s.ris_positions)
        return SceneGeometry(
            bs_position=np.asarray(s.bs_position, dtype=float),
            ris_positions=np.asarray(s.ris_positions, dtype=float),
            ue_positions=np.asarray(s.ue_positions, dtype=float),
            carrier_frequency=s.carrier_frequency,
            element_spacing_ris=s.element_spacing_ris,
            element_spacing_bs=s.element_spacing_bs,
            ris_shape=ris_shape_for(self.n_tot // n_ris),
            bs_antennas=s.bs_antennas,
            azimuth_convention=s.azimuth_convention,
        )

    def ricean_config(self) -> RiceanConfig:
        return RiceanConfig(**dataclasses.asdict(self.ricean))

    def reward_spec(self) -> RewardSpec:
        r = self.reward
        return RewardSpec.from_dbm(power_dbm=r.power_dbm, noise_dbm=r.noise_dbm, mode=r.mode,
                                   rate_requests=tuple(r.rate_requests))

    def action_space(self) -> ActionSpace:
        return action_space_for(self.geometry(), self.n_group, self.phase_bits)

    @property
    def cardinality(self) -> int:
        return self.action_space().cardinality

    @property
    def resolved_observation_mode(self) -> str:
        if self.observation_mode != "auto":
            return self.observation_mode
        return {"optimal": "oracle_channels"}.get(self.agent.kind,
                                                  "full_csi" if self.agent.kind in NETWORK_AGENTS else "none")

    @property
    def resolved_training_steps(self) -> int:
        if self.training_steps is not None:
            return self.training_steps
        if self.agent.kind in LEARNING_AGENTS:
            return TRAINING_MULTIPLIER * self.cardinality
        return 0

    def with_values(self, **dotted) -> "ExperimentConfig":
        """Copy with dotted-key overrides, e.g. ``with_values(**{"agent.kind": "ucb"})``."""
        return _apply_values(self, dotted)


def validate_config(c: ExperimentConfig) -> None:
    s = c.scene
    n_ris = len(s.ris_positions)
    if n_ris < 1 or len(s.ue_positions) < 1:
        raise ConfigError("the scene needs at least one RIS and one UE")
    for p in (s.bs_position, *s.ris_positions, *s.ue_positions):
        if len(p) != 3 or not np.all(np.isfinite(p)):
            raise ConfigError(f"positions must be finite 3-vectors, got {p}")
    if s.carrier_frequency <= 0 or s.element_spacing_bs <= 0 or s.element_spacing_ris <= 0 or s.bs_antennas < 1:
        raise ConfigError("frequency, spacings and antenna count must be positive")
    if c.n_tot < 1 or c.n_tot % n_ris:
        raise ConfigError(f"n_tot={c.n_tot} must split evenly over {n_ris} RISs")
    if c.n_group < 1 or (c.n_tot // n_ris) % c.n_group:
        raise ConfigError(f"group size {c.n_group} must divide the {c.n_tot // n_ris} elements per RIS")
    if c.phase_bits < 1:
        raise ConfigError("phase_bits must be at least 1")
    if c.agent.kind not in AGENT_KINDS:
        raise ConfigError(f"agent.kind must be one of {AGENT_KINDS}, got {c.agent.kind!r}")
    if c.scenario not in ("iid_static", "mobility"):
        raise ConfigError(f"unknown scenario {c.scenario!r}")
    if c.training_steps is not None and c.training_steps < 0:
        raise ConfigError("training_steps must be non-negative")
    if c.trials < 1 or c.eval_steps < 1 or c.eval_intervals < 1:
        raise ConfigError("trials, eval_steps and eval_intervals must be positive")
    if c.dt <= 0:
        raise ConfigError("dt must be positive")
    if c.reward.mode not in ("sum_rate", "qos"):
        raise ConfigError(f"unknown reward mode {c.reward.mode!r}")
    if c.reward.mode == "qos" and len(c.reward.rate_requests) != len(s.ue_positions):
        raise ConfigError("one rate request per UE is required in qos mode")
    if c.reward.report_noise_db < 0:
        raise ConfigError("reward.report_noise_db must be non-negative")
    mode = c.resolved_observation_mode
    if mode not in ("full_csi", "partial_aod", "none", "oracle_channels"):
        raise ConfigError(f"unknown observation mode {mode!r}")
    a = c.agent
    if a.kind in NETWORK_AGENTS:
        if mode not in ("full_csi", "partial_aod"):
            raise ConfigError(f"{a.kind} needs full_csi or partial_aod observations, not {mode!r}")
        if a.network not in ("conv", "dense_only"):
            raise ConfigError(f"unknown network variant {a.network!r}")
        if not 0.0 <= a.resolved("epsilon") <= 1.0 or a.resolved("learning_rate") <= 0:
            raise ConfigError("epsilon must lie in [0, 1] and the learning rate must be positive")
        if a.resolved("batch_size") < 1 or not 0.0 <= a.dropout < 1.0:
            raise ConfigError("batch size must be positive and dropout in [0, 1)")
        if a.dtype not in ("float32", "float64"):
            raise ConfigError("agent.dtype must be float32 or float64")
    if a.kind == "dqn":
        if a.buffer_capacity < 1 or a.target_update_interval < 1 or not 0 <= a.target_temperature <= 1:
            raise ConfigError("invalid replay capacity, target interval or target temperature")
        if len(a.gradient_clip) != 2 or a.gradient_clip[0] >= a.gradient_clip[1]:
            raise ConfigError("gradient_clip needs a low and a high bound")
        if a.discounted and a.store_next_state is False:
            raise ConfigError("discounted DQN targets need stored next states")
    if a.kind == "ucb" and a.confidence_width < 0:
        raise ConfigError("confidence_width must be non-negative")
    if a.kind == "optimal" and mode != "oracle_channels":
        raise ConfigError("the optimal agent observes the channels directly")


# ---------------------------------------------------------------------------
# config text format


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def _parse_scalar(text: str, kind):
    if kind is bool:
        low = text.lower()
        if low not in ("true", "false"):
            raise ConfigError(f"expected true or false, got {text!r}")
        return low == "true"
    try:
        return kind(text)
    except ValueError as exc:
        raise ConfigError(f"cannot read {text!r} as {kind.__name__}") from exc


def _parse_value(text: str, hint):
    text = text.strip()
    args = typing.get_args(hint)
    if type(None) in args:
        if text.lower() == "none":
            return None
        hint = next(a for a in args if a is not type(None))
        args = typing.get_args(hint)
    if typing.get_origin(hint) is tuple:
        inner = args[0]
        if typing.get_origin(inner) is tuple:
            return tuple(_parse_value(part, inner) for part in text.split(";") if part.strip())
        return tuple(_parse_scalar(part.strip(), inner) for part in text.split(",") if part.strip())
    return _parse_scalar(text, hint)


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(_format_value(v) for v in value)
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _apply_values(config: ExperimentConfig, values: dict) -> ExperimentConfig:
    top = _hints(ExperimentConfig)
    sections: dict[str, dict] = {}
    flat: dict = {}
    for key, raw in values.items():
        parts = key.split(".")
        if len(parts) == 1 and key in top and not dataclasses.is_dataclass(getattr(config, key)):
            flat[key] = _parse_value(raw, top[key]) if isinstance(raw, str) else raw
        elif len(parts) == 2 and parts[0] in top and dataclasses.is_dataclass(getattr(config, parts[0])):
            section_hints = _hints(type(getattr(config, parts[0])))
            if parts[1] not in section_hints:
                raise ConfigError(f"unknown config key {key!r}")
            sections.setdefault(parts[0], {})[parts[1]] = (
                _parse_value(raw, section_hints[parts[1]]) if isinstance(raw, str) else raw)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    for name, updates in sections.items():
        flat[name] = replace(getattr(config, name), **updates)
    return replace(config, **flat)


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Read ``key = value`` lines with dotted keys; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (p.strip() for p in line.split("=", 1))
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = raw
    return _apply_values(base or ExperimentConfig(), values)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def config_items(config: ExperimentConfig) -> list[tuple[str, str]]:
    items = []
    for f in fields(config):
        value = getattr(config, f.name)
        if dataclasses.is_dataclass(value):
            items.extend((f"{f.name}.{g.name}", _format_value(getattr(value, g.name))) for g in fields(value))
        else:
            items.append((f.name, _format_value(value)))
    return sorted(items)


def config_to_text(config: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in config_items(config))


def config_fingerprint(config: ExperimentConfig) -> str:
    """Hash of every setting that can change results (output location excluded)."""
    text = "".join(f"{k} = {v}\n" for k, v in config_items(config) if k not in ("output_path", "checkpoint_dir"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# seeds, agents, environments


@dataclass(frozen=True)
class TrialStreams:
    seed: int
    train_env: np.random.SeedSequence
    eval_env: np.random.SeedSequence
    agent: np.random.SeedSequence
    explore: np.random.SeedSequence
    probe: np.random.SeedSequence
    report: np.random.SeedSequence
    probe_act: np.random.SeedSequence
    eval_act: np.random.SeedSequence


def trial_seed(config: ExperimentConfig, trial_index: int) -> int:
    return int(config.seed) + int(trial_index)


def trial_streams(seed: int) -> TrialStreams:
    children = np.random.SeedSequence(int(seed)).spawn(8)
    return TrialStreams(int(seed), *children)


def _child(seq: np.random.SeedSequence, i: int) -> np.random.SeedSequence:
    # stateless counterpart of ``spawn``: the same parent always yields the same child
    return np.random.SeedSequence(seq.entropy, spawn_key=tuple(seq.spawn_key) + (i,))


def _int_seed(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, np.uint32)[0])


def build_agent(config: ExperimentConfig, space: ActionSpace | None = None, seed=None) -> Agent:
    """Fresh agent of ``config.agent.kind`` sized for the configured scene."""
    space = space if space is not None else config.action_space()
    a = config.agent
    n = space.cardinality
    if a.kind == "random":
        return RandomAgent(n, seed)
    if a.kind == "optimal":
        return OptimalAgent(space, config.reward_spec(), seed)
    if a.kind == "ucb":
        return UcbAgent(n, a.confidence_width, seed)
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = [_child(root, 0), _child(root, 1)]
    mode = config.resolved_observation_mode
    geometry = config.geometry()
    dim = observation_dimension(mode, geometry.n_tot, geometry.n_ues, geometry.bs_antennas, geometry.n_ris)
    net = build_reward_network(dim, n, a.network, seed=_int_seed(seeds[0]), dropout_probability=a.dropout,
                               dtype=np.dtype(a.dtype))
    common = dict(epsilon=a.resolved("epsilon"), learning_rate=a.resolved("learning_rate"),
                  batch_size=a.resolved("batch_size"), observation_mode=mode, seed=_int_seed(seeds[1]))
    if a.kind == "neural_eg":
        return NeuralEpsilonGreedyAgent(net, n, **common)
    return DqnAgent(net, n, buffer_capacity=a.buffer_capacity, target_update_interval=a.target_update_interval,
                    target_temperature=a.target_temperature, gradient_clip=tuple(a.gradient_clip),
                    discounted=a.discounted, gamma=a.gamma, store_next_state=a.store_next_state, **common)


def build_environment(config: ExperimentConfig, rng: np.random.Generator, space: ActionSpace | None = None,
                      report_rng: np.random.Generator | None = None) -> RisEnvironment:
    return RisEnvironment(config.geometry(), config.ricean_config(),
                          space if space is not None else config.action_space(), config.reward_spec(),
                          observation_mode=config.resolved_observation_mode, scenario=config.scenario, rng=rng,
                          dt=config.dt, sinr_report_noise_db=config.reward.report_noise_db, report_rng=report_rng)


def _prepare(agent: Agent, config: ExperimentConfig, streams: TrialStreams, space: ActionSpace) -> None:
    # the probe runs on its own environment so the training trajectory is agent-independent
    probe_env = build_environment(config, np.random.default_rng(streams.probe), space)
    agent.prepare(probe_env, np.random.default_rng(streams.probe_act))


def _train(agent: Agent, env: RisEnvironment, steps: int, rng: np.random.Generator, first_step: int,
           trace: list) -> None:
    for t in range(first_step, first_step + steps):
        obs = env.observation()
        a = agent.act(obs, True, rng)
        reward, next_obs, _ = env.step(a)
        agent.record(obs, a, reward, next_obs)
        agent.train_tick(t)
        trace.append(reward)


@dataclass
class TrainingOutcome:
    agent: Agent
    trace: np.ndarray
    seconds: float


def run_training(config: ExperimentConfig, seed: int, agent: Agent | None = None) -> TrainingOutcome:
    """Run the configured number of explore-mode act/step/record/train cycles."""
    streams = trial_streams(seed)
    space = config.action_space()
    if agent is None:
        agent = build_agent(config, space, streams.agent)
    steps = config.resolved_training_steps
    trace: list = []
    start = time.perf_counter()
    if steps > 0:
        _prepare(agent, config, streams, space)
        env = build_environment(config, np.random.default_rng(streams.train_env), space,
                                np.random.default_rng(streams.report))
        _train(agent, env, steps, np.random.default_rng(streams.explore), 1, trace)
    return TrainingOutcome(agent, np.asarray(trace, dtype=float), time.perf_counter() - start)


@dataclass
class EvaluationOutcome:
    rewards: np.ndarray
    optimal_rewards: np.ndarray
    positions: list = field(default_factory=list)
    seconds: float = 0.0

    @property
    def mean(self) -> float:
        return float(np.mean(self.rewards))

    @property
    def optimal_mean(self) -> float:
        return float(np.mean(self.optimal_rewards))


def evaluation_draws(config: ExperimentConfig, seed: int):
    """The static protocol's matched evaluation channels for one trial."""
    geometry = config.geometry()
    rng = np.random.default_rng(trial_streams(seed).eval_env)
    terms = static_terms(geometry)
    ricean = config.ricean_config()
    return [draw_channel_set(geometry, ricean, rng, terms) for _ in range(config.eval_steps)]


def _greedy_rewards(agent: Agent, channel_sets, space: ActionSpace, spec: RewardSpec, mode: str,
                    rng: np.random.Generator):
    rewards, optimal = [], []
    for channels in channel_sets:
        obs = channels if mode == "oracle_channels" else observe(channels, mode)
        a = agent.act(obs, False, rng)
        rewards.append(action_reward(channels, space.decode(a), spec))
        optimal.append(exhaustive_best_action(channels, space, spec)[1])
    return rewards, optimal


def evaluate_static(agent: Agent, config: ExperimentConfig, seed: int) -> EvaluationOutcome:
    """Greedy rewards on the trial's evaluation draws, paired with the exhaustive optimum."""
    space = config.action_space()
    draws = evaluation_draws(config, seed)
    rng = np.random.default_rng(trial_streams(seed).eval_act)
    start = time.perf_counter()
    rewards, optimal = _greedy_rewards(agent, draws, space, config.reward_spec(), config.resolved_observation_mode,
                                       rng)
    return EvaluationOutcome(np.asarray(rewards), np.asarray(optimal), seconds=time.perf_counter() - start)


def window_boundaries(training_steps: int, intervals: int) -> list[int]:
    """Cumulative training step counts after which each evaluation window starts."""
    return [round(training_steps * (i + 1) / intervals) for i in range(intervals)]


def evaluate_mobility(agent: Agent, config: ExperimentConfig, seed: int,
                      trace: list | None = None) -> EvaluationOutcome:
    """Alternate training chunks with greedy windows on one walking-UE trajectory.

    Learning is paused inside the windows while the UEs keep moving. The
    trajectory (and so the channel sequence) does not depend on the agent.
    """
    streams = trial_streams(seed)
    space = config.action_space()
    spec = config.reward_spec()
    mode = config.resolved_observation_mode
    env = build_environment(config, np.random.default_rng(streams.train_env), space,
                            np.random.default_rng(streams.report))
    explore = np.random.default_rng(streams.explore)
    eval_rng = np.random.default_rng(streams.eval_act)
    total = config.resolved_training_steps
    learns = config.agent.kind in LEARNING_AGENTS
    if learns and total > 0:
        _prepare(agent, config, streams, space)
    trace = trace if trace is not None else []
    rewards, optimal, positions = [], [], []
    done = 0
    train_seconds = 0.0
    for boundary in window_boundaries(total, config.eval_intervals):
        start = time.perf_counter()
        if learns:
            _train(agent, env, boundary - done, explore, done + 1, trace)
        else:
            for _ in range(boundary - done):
                env.advance()
        train_seconds += time.perf_counter() - start
        done = boundary
        positions.append(env.ue_positions())
        for _ in range(config.eval_steps):
            window_r, window_o = _greedy_rewards(agent, [env.channels], space, spec, mode, eval_rng)
            rewards += window_r
            optimal += window_o
            env.advance()
    return EvaluationOutcome(np.asarray(rewards), np.asarray(optimal), positions, train_seconds)


# ---------------------------------------------------------------------------
# trials and aggregation


@dataclass
class TrialResult:
    trial: int
    seed: int
    mean_reward: float
    optimal_mean: float
    normalized_ratio: float
    std: float
    steps_per_sec: float
    rewards: np.ndarray = field(repr=False, default=None)
    optimal_rewards: np.ndarray = field(repr=False, default=None)
    training_trace: np.ndarray = field(repr=False, default=None)
    checkpoint: str | None = None


def _ratio(mean: float, optimal_mean: float) -> float:
    return mean / optimal_mean if optimal_mean > 0 else float("nan")


def run_trial(config: ExperimentConfig, trial_index: int) -> TrialResult:
    seed = trial_seed(config, trial_index)
    streams = trial_streams(seed)
    space = config.action_space()
    agent = build_agent(config, space, streams.agent)
    if config.scenario == "mobility":
        trace: list = []
        outcome = evaluate_mobility(agent, config, seed, trace)
        trace_arr, seconds, steps = np.asarray(trace, dtype=float), outcome.seconds, len(trace)
    else:
        training = run_training(config, seed, agent)
        outcome = evaluate_static(agent, config, seed)
        trace_arr, seconds, steps = training.trace, training.seconds, len(training.trace)
    if not config.record_timing:
        sps = float("nan")
    elif steps > 0:
        sps = steps / seconds
    else:
        sps = len(outcome.rewards) / outcome.seconds
    checkpoint = None
    if config.checkpoint_dir:
        directory = Path(config.checkpoint_dir) / config_fingerprint(config) / f"trial{trial_index}"
        checkpoint = str(agent.save_checkpoint(directory))
    return TrialResult(trial_index, seed, outcome.mean, outcome.optimal_mean,
                       _ratio(outcome.mean, outcome.optimal_mean), float(np.std(outcome.rewards)), sps,
                       outcome.rewards, outcome.optimal_rewards, trace_arr, checkpoint)


@dataclass
class ResultsTable:
    config: ExperimentConfig
    trials: list[TrialResult]

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.config)

    @property
    def agent(self) -> str:
        return self.config.agent.kind

    @property
    def n_tot(self) -> int:
        return self.config.n_tot

    @property
    def cardinality(self) -> int:
        return self.config.cardinality

    @property
    def mean(self) -> float:
        return float(np.mean([t.mean_reward for t in self.trials]))

    @property
    def std(self) -> float:
        return float(np.std([t.mean_reward for t in self.trials]))

    @property
    def optimal_mean(self) -> float:
        return float(np.mean([t.optimal_mean for t in self.trials]))

    @property
    def normalized_ratio(self) -> float:
        """Average of the per-trial paired ratios."""
        return float(np.mean([t.normalized_ratio for t in self.trials]))


def resolve_threads(threads: int | None = None) -> int:
    if threads is not None:
        return max(1, int(threads))
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw.strip() == "":
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from exc
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value


def run_experiment(config: ExperimentConfig, threads: int | None = None) -> ResultsTable:
    """All trials of ``config``, in parallel processes when more than one worker is allowed."""
    workers = min(resolve_threads(threads), config.trials)
    indices = list(range(config.trials))
    if workers <= 1:
        trials = [run_trial(config, i) for i in indices]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(run_trial, [config] * len(indices), indices))
    return ResultsTable(config, sorted(trials, key=lambda t: t.trial))


# ---------------------------------------------------------------------------
# throughput


def measure_throughput(kind: str, config: ExperimentConfig, duration_steps: int = 100, warmup: int = 50,
                       repeats: int = 3, seed: int | None = None) -> float:
    """Median steps/sec of the full act/step/record/train cycle after a warm-up.

    The warm-up is stretched to fill one DQN minibatch so that the timed
    steps include network updates.
    """
    if duration_steps < 1 or repeats < 1:
        raise ConfigError("duration_steps and repeats must be positive")
    cfg = config.with_values(**{"agent.kind": kind, "observation_mode": "auto"})
    seed = cfg.seed if seed is None else seed
    streams = trial_streams(seed)
    space = cfg.action_space()
    agent = build_agent(cfg, space, streams.agent)
    _prepare(agent, cfg, streams, space)
    env = build_environment(cfg, np.random.default_rng(streams.train_env), space)
    rng = np.random.default_rng(streams.explore)
    if kind in NETWORK_AGENTS:
        warmup = max(warmup, cfg.agent.resolved("batch_size"))
    trace: list = []
    _train(agent, env, warmup, rng, 1, trace)
    step = warmup + 1
    rates = []
    for _ in range(repeats):
        start = time.perf_counter()
        _train(agent, env, duration_steps, rng, step, trace)
        rates.append(duration_steps / (time.perf_counter() - start))
        step += duration_steps
    return float(np.median(rates))


# ---------------------------------------------------------------------------
# result files


def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _rows(tables):
    for table in tables:
        for t in table.trials:
            yield {"fingerprint": table.fingerprint, "agent": table.agent, "n_tot": _num(table.n_tot),
                   "card_A": _num(table.cardinality), "trial": _num(t.trial), "mean_reward": _num(t.mean_reward),
                   "normalized_ratio": _num(t.normalized_ratio), "std": _num(t.std),
                   "steps_per_sec": _num(t.steps_per_sec), "seed": _num(t.seed)}


def _json_float(x):
    x = float(x)
    return x if np.isfinite(x) else None


def results_to_csv(tables) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(_rows(tables))
    return buf.getvalue()


def results_to_json(tables) -> str:
    doc = []
    for table in tables:
        doc.append({
            "fingerprint": table.fingerprint,
            "agent": table.agent,
            "n_tot": table.n_tot,
            "card_A": table.cardinality,
            "config": dict(config_items(table.config)),
            "aggregate": {"mean_reward": _json_float(table.mean), "std": _json_float(table.std),
                          "optimal_mean": _json_float(table.optimal_mean),
                          "normalized_ratio": _json_float(table.normalized_ratio)},
            "trials": [{"trial": t.trial, "seed": t.seed, "mean_reward": _json_float(t.mean_reward),
                        "optimal_mean": _json_float(t.optimal_mean),
                        "normalized_ratio": _json_float(t.normalized_ratio), "std": _json_float(t.std),
                        "steps_per_sec": _json_float(t.steps_per_sec), "checkpoint": t.checkpoint}
                       for t in table.trials],
        })
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def emit_results(results, path, format: str = "csv") -> Path:
    """Write one table or a list of tables as CSV or JSON, creating parent directories."""
    tables = [results] if isinstance(results, ResultsTable) else list(results)
    if format == "csv":
        text = results_to_csv(tables)
    elif format == "json":
        text = results_to_json(tables)
    else:
        raise ConfigError(f"unknown output format {format!r}")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return path


def read_results_csv(path) -> list[dict]:
    """Parse an emitted CSV back into typed rows."""
    ints = {"n_tot", "card_A", "trial", "seed"}
    floats = {"mean_reward", "normalized_ratio", "std", "steps_per_sec"}
    with open(path, newline="") as fh:
        rows = []
        for row in csv.DictReader(fh):
            rows.append({k: int(v) if k in ints else float(v) if k in floats else v for k, v in row.items()})
        return rows
