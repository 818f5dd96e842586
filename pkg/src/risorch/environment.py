"""Discrete action space, SINR/reward computation and the stepping environment."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry_channel import (
    ConfigError,
    ChannelSet,
    RiceanConfig,
    SceneGeometry,
    UeMobilityState,
    advance_mobility,
    dbm_to_watts,
    draw_channel_set,
    paper_mobility_states,
    static_terms,
)

OBSERVATION_MODES = ("full_csi", "partial_aod", "none")
REWARD_MODES = ("sum_rate", "qos")
SCENARIOS = ("iid_static", "mobility")


@dataclass(frozen=True)
class PhaseSet:
    resolution_bits: int = 1

    def __post_init__(self):
        if self.resolution_bits < 1:
            raise ConfigError("phase resolution must be at least one bit")

    @property
    def size(self) -> int:
        return 2 ** self.resolution_bits

    @property
    def values(self) -> np.ndarray:
        f = np.arange(self.size)
        return np.exp(1j * 2.0 ** (1 - self.resolution_bits) * np.pi * f)


def dft_precoder_codebook(n_t: int, n_ues: int) -> list[np.ndarray]:
    """Per-UE candidate beams: unit-norm DFT columns split into contiguous blocks.

    UE k may choose among columns ``[k*c, (k+1)*c)`` of the ``n_t``-point DFT
    matrix with ``c = n_t // n_ues``.
    """
    if n_t < n_ues:
        raise ConfigError("need at least one DFT column per UE")
    dft = np.fft.fft(np.eye(n_t)) / np.sqrt(n_t)
    per_ue = n_t // n_ues
    return [dft[:, k * per_ue:(k + 1) * per_ue] for k in range(n_ues)]


@dataclass
class Action:
    index: int
    group_phases: tuple[int, ...]
    precoder_choice: tuple[int, ...]
    phases: np.ndarray  # (M, N) diagonal entries of each phase matrix
    precoder: np.ndarray  # (N_T, K)

    @property
    def phase_matrices(self) -> list[np.ndarray]:
        return [np.diag(p) for p in self.phases]

    def vector(self) -> np.ndarray:
        """Stacked ``[phi_1; ...; phi_M; vec(V)]`` action vector."""
        return np.concatenate([self.phases.ravel(), self.precoder.ravel(order="F")])


@dataclass
class ActionSpace:
    """Joint RIS-group phases x per-UE precoder choices with a canonical index.

    ``index = phase_integer * n_precoders + precoder_integer``; the phase
    integer reads the group phase indices (RIS-major, then group order) as a
    base-``2**b`` number with the first group most significant, and the
    precoder integer does the same with the per-UE beam choices.
    """

    n_ris: int
    ris_shape: tuple[int, int]
    group_size: int
    phase_set: PhaseSet
    precoder_options: list[np.ndarray]
    element_group: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.elements_per_ris
        if self.group_size < 1 or n % self.group_size:
            raise ConfigError(f"{n} elements per RIS are not divisible into groups of {self.group_size}")
        n_h, n_v = self.ris_shape
        i = np.arange(n)
        # steering vectors run horizontal-fastest; groups run vertical-first
        column_major = (i % n_h) * n_v + i // n_h
        self.element_group = column_major // self.group_size
        for opts in self.precoder_options:
            if not np.allclose(np.linalg.norm(opts, axis=0), 1.0, atol=1e-12):
                raise ConfigError("precoder columns must have unit norm")
        self._precoder_radix = np.array([o.shape[1] for o in self.precoder_options])

    @property
    def elements_per_ris(self) -> int:
        return self.ris_shape[0] * self.ris_shape[1]

    @property
    def groups_per_ris(self) -> int:
        return self.elements_per_ris // self.group_size

    @property
    def n_control(self) -> int:
        return self.n_ris * self.groups_per_ris

    @property
    def n_ues(self) -> int:
        return len(self.precoder_options)

    @property
    def n_phase_profiles(self) -> int:
        return self.phase_set.size ** self.n_control

    @property
    def n_precoders(self) -> int:
        return int(np.prod(self._precoder_radix))

    @property
    def cardinality(self) -> int:
        return self.n_phase_profiles * self.n_precoders

    def __len__(self) -> int:
        return self.cardinality

    def split_index(self, index: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
        if not 0 <= index < self.cardinality:
            raise IndexError(f"action index {index} outside [0, {self.cardinality})")
        phase_int, prec_int = divmod(int(index), self.n_precoders)
        base = self.phase_set.size
        digits = []
        for _ in range(self.n_control):
            phase_int, d = divmod(phase_int, base)
            digits.append(d)
        choices = []
        for radix in self._precoder_radix[::-1]:
            prec_int, d = divmod(prec_int, int(radix))
            choices.append(d)
        return tuple(digits[::-1]), tuple(choices[::-1])

    def encode(self, group_phases: Sequence[int], precoder_choice: Sequence[int]) -> int:
        if len(group_phases) != self.n_control or len(precoder_choice) != self.n_ues:
            raise ValueError("wrong number of group phases or precoder choices")
        phase_int = 0
        for d in group_phases:
            if not 0 <= d < self.phase_set.size:
                raise ValueError(f"phase index {d} out of range")
            phase_int = phase_int * self.phase_set.size + int(d)
        prec_int = 0
        for d, radix in zip(precoder_choice, self._precoder_radix):
            if not 0 <= d < radix:
                raise ValueError(f"precoder choice {d} out of range")
            prec_int = prec_int * int(radix) + int(d)
        return phase_int * self.n_precoders + prec_int

    def element_phases(self, group_phases: Sequence[int]) -> np.ndarray:
        """Expand group phase indices to the (M, N) reflection coefficients."""
        g = np.asarray(group_phases).reshape(self.n_ris, self.groups_per_ris)
        return self.phase_set.values[g[:, self.element_group]]

    def precoder_matrix(self, precoder_choice: Sequence[int]) -> np.ndarray:
        return np.stack([opts[:, c] for opts, c in zip(self.precoder_options, precoder_choice)], axis=1)

    def decode(self, index: int) -> Action:
        group_phases, precoder_choice = self.split_index(index)
        return Action(
            index=int(index),
            group_phases=group_phases,
            precoder_choice=precoder_choice,
            phases=self.element_phases(group_phases),
            precoder=self.precoder_matrix(precoder_choice),
        )


def build_action_space(n_ris: int, ris_shape: tuple[int, int], group_size: int = 16,
                       phase_bits: int = 1, n_t: int = 4, n_ues: int = 2,
                       precoder_options: list[np.ndarray] | None = None) -> ActionSpace:
    if precoder_options is None:
        precoder_options = dft_precoder_codebook(n_t, n_ues)
    return ActionSpace(n_ris, tuple(ris_shape), group_size, PhaseSet(phase_bits), precoder_options)


def action_space_for(geometry: SceneGeometry, group_size: int = 16, phase_bits: int = 1) -> ActionSpace:
    return build_action_space(geometry.n_ris, geometry.ris_shape, group_size, phase_bits,
                              geometry.bs_antennas, geometry.n_ues)


def decode_action(space: ActionSpace, index: int) -> Action:
    return space.decode(index)


@dataclass(frozen=True)
class RewardSpec:
    """Reward settings; powers are in Watts (use :meth:`from_dbm` for dBm)."""

    mode: str = "sum_rate"
    rate_requests: tuple[float, ...] = (0.4, 0.4)
    power: float = dbm_to_watts(40.0)
    noise_power: float = dbm_to_watts(-110.0)

    def __post_init__(self):
        if self.mode not in REWARD_MODES:
            raise ConfigError(f"reward mode must be one of {REWARD_MODES}")
        if self.power <= 0 or self.noise_power <= 0:
            raise ConfigError("power and noise power must be positive")
        if any(r < 0 for r in self.rate_requests):
            raise ConfigError("rate requests must be non-negative")

    @classmethod
    def from_dbm(cls, power_dbm: float = 40.0, noise_dbm: float = -110.0, **kwargs) -> "RewardSpec":
        return cls(power=dbm_to_watts(power_dbm), noise_power=dbm_to_watts(noise_dbm), **kwargs)


def cascaded_channels(channels: ChannelSet, action: Action) -> np.ndarray:
    """End-to-end channels of all UEs, shape (K, N_T)."""
    out = np.sqrt(channels.pathloss_direct)[:, None] * channels.direct
    for m in range(channels.n_ris):
        scale = np.sqrt(channels.pathloss_ris_bs[m] * channels.pathloss_ue_ris[m])
        out = out + scale[:, None] * ((channels.ue_ris[m] * action.phases[m]) @ channels.ris_bs[m])
    return out


def cascaded_channel(channels: ChannelSet, action: Action, k: int) -> np.ndarray:
    b = np.sqrt(channels.pathloss_direct[k]) * channels.direct[k]
    for m in range(channels.n_ris):
        scale = np.sqrt(channels.pathloss_ris_bs[m] * channels.pathloss_ue_ris[m, k])
        b = b + scale * (channels.ue_ris[m, k] * action.phases[m]) @ channels.ris_bs[m]
    return b


def sinrs_from_gains(gains: np.ndarray, noise_term: float) -> np.ndarray:
    """SINRs from ``gains[..., k, i] = |b_k V[:, i]|**2``."""
    signal = np.diagonal(gains, axis1=-2, axis2=-1)
    interference = gains.sum(axis=-1) - signal
    return signal / (interference + noise_term)


def compute_sinrs(channels: ChannelSet, action: Action, spec: RewardSpec) -> np.ndarray:
    b = cascaded_channels(channels, action)
    gains = np.abs(b @ action.precoder) ** 2
    K = b.shape[0]
    return sinrs_from_gains(gains, K * spec.noise_power / spec.power)


def rates(sinrs) -> np.ndarray:
    return np.log2(1.0 + np.asarray(sinrs, dtype=float))


def reward_sum_rate(sinrs) -> float:
    return float(rates(sinrs).sum())


def reward_qos(sinrs, spec: RewardSpec) -> float:
    r = rates(sinrs)
    req = np.asarray(spec.rate_requests, dtype=float)
    if req.shape != r.shape:
        raise ConfigError(f"{r.size} UEs but {req.size} rate requests")
    unmet = int(np.count_nonzero(r < req))
    if unmet:
        return -float(unmet)
    return float(r.sum())


def reward_from_sinrs(sinrs, spec: RewardSpec) -> float:
    return reward_sum_rate(sinrs) if spec.mode == "sum_rate" else reward_qos(sinrs, spec)


def action_reward(channels: ChannelSet, action: Action, spec: RewardSpec) -> float:
    return reward_from_sinrs(compute_sinrs(channels, action, spec), spec)


@dataclass
class Observation:
    mode: str
    data: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.data.size)


def observation_dimension(mode: str, n_tot: int, n_ues: int, n_t: int, n_ris: int) -> int:
    if mode == "full_csi":
        return 2 * (n_tot * (n_ues + n_t) + n_ues * n_t)
    if mode == "partial_aod":
        return 2 * n_ris * n_ues
    if mode == "none":
        return 0
    raise ConfigError(f"unknown observation mode {mode!r}")


def observe(channels: ChannelSet, mode: str) -> Observation:
    """Agent-side view of a channel realization.

    ``full_csi`` stacks ``[vec(H_1; ...; H_M); g_11; g_12; ...; g_MK; h_1; ...; h_K]``
    (column-major vec) and maps it to reals as ``[real parts; imaginary parts]``.
    """
    if mode == "full_csi":
        stacked_h = np.concatenate(list(channels.ris_bs), axis=0)
        z = np.concatenate([
            stacked_h.ravel(order="F"),
            channels.ue_ris.reshape(-1),
            channels.direct.reshape(-1),
        ])
        return Observation(mode, np.concatenate([z.real, z.imag]))
    if mode == "partial_aod":
        return Observation(mode, channels.aods_ris_ue.reshape(-1).astype(float))
    if mode == "none":
        return Observation(mode, np.zeros(0))
    raise ConfigError(f"unknown observation mode {mode!r}")


class RisEnvironment:
    """Single-owner stepping environment.

    Channels are drawn i.i.d. per step (``iid_static``) or follow walking
    UEs whose LOS geometry is refreshed every coherence interval
    (``mobility``). The reward of step t is computed on the channels that
    were observed at step t.
    """

    def __init__(self, geometry: SceneGeometry, ricean: RiceanConfig, space: ActionSpace,
                 reward: RewardSpec, observation_mode: str = "full_csi", scenario: str = "iid_static",
                 rng: np.random.Generator | None = None, dt: float = 0.006,
                 mobility: list[UeMobilityState] | None = None, sinr_report_noise_db: float = 0.0,
                 report_rng: np.random.Generator | None = None):
        if observation_mode not in OBSERVATION_MODES + ("oracle_channels",):
            raise ConfigError(f"unknown observation mode {observation_mode!r}")
        if scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}")
        if sinr_report_noise_db < 0:
            raise ConfigError("sinr_report_noise_db must be non-negative")
        self.geometry = geometry
        self.ricean = ricean
        self.space = space
        self.reward_spec = reward
        self.observation_mode = observation_mode
        self.scenario = scenario
        self.rng = rng if rng is not None else np.random.default_rng()
        self.report_rng = report_rng if report_rng is not None else np.random.default_rng(0)
        self.dt = dt
        self.sinr_report_noise_db = sinr_report_noise_db
        if scenario == "mobility":
            self.mobility = list(mobility) if mobility is not None else paper_mobility_states(geometry.ue_positions)
            self.geometry = geometry.with_ue_positions([s.position for s in self.mobility])
        else:
            self.mobility = None
        self._terms = static_terms(self.geometry)
        self.steps = 0
        self.channels = draw_channel_set(self.geometry, self.ricean, self.rng, self._terms)

    def observation(self):
        if self.observation_mode == "oracle_channels":
            return self.channels
        return observe(self.channels, self.observation_mode)

    def ue_positions(self) -> np.ndarray:
        return self.geometry.ue_positions.copy()

    def _advance(self):
        if self.scenario == "mobility":
            self.mobility = [advance_mobility(s, self.dt) for s in self.mobility]
            self.geometry = self.geometry.with_ue_positions([s.position for s in self.mobility])
            self._terms = static_terms(self.geometry)
        self.channels = draw_channel_set(self.geometry, self.ricean, self.rng, self._terms)

    def advance(self) -> None:
        """Move to the next coherence interval without acting."""
        self._advance()
        self.steps += 1

    def step(self, action_index: int):
        """Apply an action; returns ``(reward, next_observation, diagnostics)``."""
        action = self.space.decode(action_index)
        sinrs = compute_sinrs(self.channels, action, self.reward_spec)
        true_reward = reward_from_sinrs(sinrs, self.reward_spec)
        reported = sinrs
        if self.sinr_report_noise_db > 0:
            jitter_db = self.report_rng.normal(0.0, self.sinr_report_noise_db, size=sinrs.shape)
            reported = sinrs * 10.0 ** (jitter_db / 10.0)
        reward = reward_from_sinrs(reported, self.reward_spec)
        diagnostics = {
            "sinrs": sinrs,
            "rates": rates(sinrs),
            "true_reward": true_reward,
            "channels": self.channels,
        }
        self._advance()
        self.steps += 1
        return reward, self.observation(), diagnostics


def env_step(env: RisEnvironment, action_index: int):
    return env.step(action_index)
