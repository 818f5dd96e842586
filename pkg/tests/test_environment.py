import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from risorch.agents import exhaustive_best_action
from risorch.environment import (ActionSpace, Observation, PhaseSet, RewardSpec, RisEnvironment, action_reward,
                                 build_action_space, cascaded_channel, cascaded_channels, compute_sinrs,
                                 decode_action, dft_precoder_codebook, env_step, observation_dimension, observe,
                                 reward_qos, reward_sum_rate, sinrs_from_gains)
from risorch.geometry_channel import ChannelSet, ConfigError, RiceanConfig, SceneGeometry, draw_channel_set


def paper_space(n_tot=32, group=16, bits=1):
    geometry = SceneGeometry.paper_default(n_tot)
    return geometry, build_action_space(2, geometry.ris_shape, group, bits, 4, 2)


def toy_channels(rng, n=2, n_t=2, m=1, k=1, direct=True):
    def cn(*shape):
        return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)
    return ChannelSet(
        ris_bs=cn(m, n, n_t), ue_ris=cn(m, k, n), direct=cn(k, n_t) if direct else np.zeros((k, n_t), complex),
        pathloss_direct=rng.uniform(0.1, 1, k), pathloss_ris_bs=rng.uniform(0.1, 1, m),
        pathloss_ue_ris=rng.uniform(0.1, 1, (m, k)), aods_ris_ue=np.zeros((m, k, 2)))


# phase set and action space -------------------------------------------------------

def test_one_bit_phase_set():
    np.testing.assert_allclose(PhaseSet(1).values, [1, -1], atol=1e-15)


@pytest.mark.parametrize("bits", [1, 2, 3])
def test_phase_set_formula(bits):
    v = PhaseSet(bits).values
    f = np.arange(2 ** bits)
    np.testing.assert_allclose(v, np.exp(1j * 2.0 ** (1 - bits) * np.pi * f))
    np.testing.assert_allclose(np.abs(v), 1.0)


@pytest.mark.parametrize("n_tot, card", [(32, 16), (64, 64), (96, 256), (128, 1024), (160, 4096)])
def test_cardinality(n_tot, card):
    _, space = paper_space(n_tot)
    assert space.cardinality == card == 2 ** space.n_control * 4
    assert space.n_control == n_tot // 16


def test_two_bit_cardinality():
    _, space = paper_space(32, bits=2)
    assert space.cardinality == 4 ** 2 * 4


def test_indivisible_grouping():
    with pytest.raises(ConfigError):
        build_action_space(2, (4, 4), group_size=5)


def test_precoder_columns_unit_norm():
    for opts in dft_precoder_codebook(4, 2):
        np.testing.assert_allclose(np.linalg.norm(opts, axis=0), 1.0, atol=1e-12)
    dft = np.fft.fft(np.eye(4)) / 2
    np.testing.assert_allclose(dft_precoder_codebook(4, 2)[1], dft[:, 2:])


def test_decode_zero_and_max():
    _, space = paper_space(64)
    a = decode_action(space, 0)
    assert a.group_phases == (0,) * space.n_control and a.precoder_choice == (0, 0)
    np.testing.assert_allclose(a.phases, 1.0)
    z = decode_action(space, space.cardinality - 1)
    assert z.group_phases == (1,) * space.n_control and z.precoder_choice == (1, 1)
    np.testing.assert_allclose(z.phases, -1.0, atol=1e-15)


def test_canonical_order():
    _, space = paper_space(32)
    # index = phase_integer * 4 + UE1 choice * 2 + UE2 choice
    assert space.encode((1, 0), (0, 1)) == 2 * 4 + 1
    assert space.encode((0, 1), (1, 0)) == 1 * 4 + 2


def test_round_trip_card_64():
    _, space = paper_space(64)
    for i in range(space.cardinality):
        a = space.decode(i)
        assert space.encode(a.group_phases, a.precoder_choice) == i


@settings(max_examples=60, deadline=None)
@given(st.sampled_from([32, 64, 96, 128, 160]), st.data())
def test_round_trip_property(n_tot, data):
    _, space = paper_space(n_tot)
    i = data.draw(st.integers(0, space.cardinality - 1))
    a = space.decode(i)
    assert space.encode(a.group_phases, a.precoder_choice) == i
    np.testing.assert_allclose(np.abs(a.phases), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(a.precoder, axis=0), 1.0, atol=1e-12)


@pytest.mark.parametrize("index", [-1, 16, 100])
def test_out_of_range_index(index):
    _, space = paper_space(32)
    with pytest.raises(IndexError):
        space.decode(index)


def test_groups_share_phase_and_are_column_major():
    _, space = paper_space(64)  # 8x4 per RIS, two groups of 16
    n_h, n_v = space.ris_shape
    a = space.decode(space.encode((1, 0, 0, 1), (0, 0)))
    for m, expected in enumerate([(-1, 1), (1, -1)]):
        grid = a.phases[m].reshape(n_v, n_h)  # rows: vertical index, columns: horizontal index
        # the first n_h / 2 columns (16 elements, vertical-first) form group 0
        np.testing.assert_allclose(grid[:, : n_h // 2], expected[0])
        np.testing.assert_allclose(grid[:, n_h // 2:], expected[1])


# cascaded channel and SINR -----------------------------------------------------------

def test_cascaded_degenerate_identity_phases():
    rng = np.random.default_rng(0)
    ch = toy_channels(rng, n=4, n_t=3, m=1, k=2, direct=False)
    space = build_action_space(1, (2, 2), 4, 1, 2, 2, precoder_options=dft_precoder_codebook(2, 2))
    a = space.decode(0)
    for k in range(2):
        expected = np.sqrt(ch.pathloss_ris_bs[0] * ch.pathloss_ue_ris[0, k]) * ch.ue_ris[0, k] @ ch.ris_bs[0]
        np.testing.assert_allclose(cascaded_channel(ch, a, k), expected, atol=1e-15)


def test_zero_channels_give_zero():
    ch = toy_channels(np.random.default_rng(1))
    ch = ChannelSet(np.zeros_like(ch.ris_bs), np.zeros_like(ch.ue_ris), np.zeros_like(ch.direct),
                    ch.pathloss_direct, ch.pathloss_ris_bs, ch.pathloss_ue_ris)
    space = build_action_space(1, (2, 1), 1, 1, 2, 1)
    np.testing.assert_array_equal(cascaded_channels(ch, space.decode(3)), 0)


def test_scalar_expansion_toy():
    rng = np.random.default_rng(2)
    ch = toy_channels(rng, n=2, n_t=2, m=1, k=1, direct=False)
    space = build_action_space(1, (2, 1), 1, 1, 2, 1)
    for idx in range(space.cardinality):
        a = space.decode(idx)
        phi = a.phases[0]
        scale = np.sqrt(ch.pathloss_ris_bs[0] * ch.pathloss_ue_ris[0, 0])
        expected = [sum(scale * ch.ue_ris[0, 0, i] * phi[i] * ch.ris_bs[0, i, j] for i in range(2)) for j in range(2)]
        np.testing.assert_allclose(cascaded_channel(ch, a, 0), expected, atol=1e-15)


def test_all_ues_match_single_ue():
    rng = np.random.default_rng(3)
    ch = toy_channels(rng, n=8, n_t=4, m=2, k=2)
    space = build_action_space(2, (4, 2), 4, 1, 4, 2)
    a = space.decode(37)
    both = cascaded_channels(ch, a)
    for k in range(2):
        np.testing.assert_allclose(both[k], cascaded_channel(ch, a, k), atol=1e-14)


@pytest.mark.parametrize("group", [1, 16])
def test_grouping_equivalence(group):
    geometry, space = paper_space(32, group=group)
    ch = draw_channel_set(geometry, RiceanConfig(10, 10, 0.3), np.random.default_rng(4))
    rng = np.random.default_rng(5)
    idx = int(rng.integers(space.cardinality))
    a = space.decode(idx)
    ref = np.sqrt(ch.pathloss_direct)[:, None] * ch.direct
    for m in range(2):
        # group-free reference: explicit diagonal phase matrix per element
        phi = np.diag([space.phase_set.values[a.group_phases[m * space.groups_per_ris + space.element_group[i]]]
                       for i in range(16)])
        for k in range(2):
            ref[k] += np.sqrt(ch.pathloss_ris_bs[m] * ch.pathloss_ue_ris[m, k]) * ch.ue_ris[m, k] @ phi @ ch.ris_bs[m]
    np.testing.assert_allclose(cascaded_channels(ch, a), ref, atol=1e-18)


def test_single_ue_reduces_to_snr():
    rng = np.random.default_rng(6)
    ch = toy_channels(rng, n=2, n_t=2, m=1, k=1)
    space = build_action_space(1, (2, 1), 1, 1, 2, 1)
    spec = RewardSpec(rate_requests=(0.4,), power=2.0, noise_power=1e-3)
    a = space.decode(1)
    bv = cascaded_channel(ch, a, 0) @ a.precoder[:, 0]
    assert compute_sinrs(ch, a, spec)[0] == pytest.approx(abs(bv) ** 2 / (1e-3 / 2.0), rel=1e-12)


def test_zero_cascade_gives_zero_sinr():
    gains = np.array([[0.0, 0.0], [0.3, 1.2]])
    s = sinrs_from_gains(gains, 0.1)
    assert s[0] == 0.0


def test_signal_decomposition_toy():
    b = np.array([[1.0 + 1j, 0.5], [0.2j, 2.0]])
    V = np.array([[1.0, 0.6j], [0.0, 0.8]])
    power, noise = 4.0, 0.5
    # y_k = sqrt(P) * sum_i b_k v_i s_i + n: desired term i = k, interference i != k
    desired = [abs(b[k] @ V[:, k]) ** 2 for k in range(2)]
    interf = [abs(b[k] @ V[:, 1 - k]) ** 2 for k in range(2)]
    expected = [desired[k] / (interf[k] + 2 * noise / power) for k in range(2)]
    gains = np.abs(b @ V) ** 2
    np.testing.assert_allclose(sinrs_from_gains(gains, 2 * noise / power), expected, rtol=1e-14)


@given(st.lists(st.floats(0, 100), min_size=4, max_size=4), st.floats(1e-6, 10))
def test_removing_interference_never_hurts(g, noise):
    gains = np.array(g).reshape(2, 2)
    clean = np.diag(np.diag(gains))
    assert np.all(sinrs_from_gains(clean, noise) >= sinrs_from_gains(gains, noise) - 1e-12)


# rewards -------------------------------------------------------------------------------

@pytest.mark.parametrize("sinrs, expected", [((1, 1), 2.0), ((0, 0), 0.0), ((3, 15), 6.0)])
def test_sum_rate(sinrs, expected):
    assert reward_sum_rate(sinrs) == pytest.approx(expected, abs=1e-15)


def _sinr_for_rate(rate):
    return 2 ** rate - 1


def test_qos_cases():
    spec = RewardSpec(mode="qos", rate_requests=(0.4, 0.4))
    assert reward_qos([_sinr_for_rate(0.1), _sinr_for_rate(0.2)], spec) == -2.0
    assert reward_qos([_sinr_for_rate(0.5), _sinr_for_rate(0.5)], spec) == pytest.approx(1.0)
    assert reward_qos([_sinr_for_rate(0.5), _sinr_for_rate(0.3)], spec) == -1.0


@given(st.lists(st.floats(0, 1e4), min_size=2, max_size=2), st.lists(st.floats(0, 5), min_size=2, max_size=2))
def test_qos_sign_semantics(sinrs, requests):
    spec = RewardSpec(mode="qos", rate_requests=tuple(requests))
    r = reward_qos(sinrs, spec)
    rates = np.log2(1 + np.array(sinrs))
    unmet = int(np.sum(rates < np.array(requests)))
    if r > 0:
        assert unmet == 0
    if unmet:
        assert r == -unmet
    else:
        assert r == pytest.approx(rates.sum())


def test_reward_spec_validation():
    with pytest.raises(ConfigError):
        RewardSpec(mode="bogus")
    with pytest.raises(ConfigError):
        RewardSpec(power=0.0)
    with pytest.raises(ConfigError):
        RewardSpec(rate_requests=(-1.0, 0.4))
    spec = RewardSpec.from_dbm(40, -110)
    assert spec.power == pytest.approx(10.0) and spec.noise_power == pytest.approx(1e-14)


# observations ------------------------------------------------------------------------------

@pytest.mark.parametrize("n_tot, dim", [(32, 400), (64, 784), (96, 1168), (128, 1552), (160, 1936)])
def test_full_csi_dimension(n_tot, dim):
    assert observation_dimension("full_csi", n_tot, 2, 4, 2) == dim
    geometry = SceneGeometry.paper_default(n_tot)
    ch = draw_channel_set(geometry, RiceanConfig(), np.random.default_rng(0))
    assert observe(ch, "full_csi").dimension == dim


def test_literal_n_tot_80_dimension():
    assert observation_dimension("full_csi", 80, 2, 4, 2) == 2 * (80 * 6 + 8)


def test_partial_and_empty():
    geometry = SceneGeometry.paper_default(32)
    ch = draw_channel_set(geometry, RiceanConfig(), np.random.default_rng(0))
    obs = observe(ch, "partial_aod")
    assert obs.dimension == 8 == observation_dimension("partial_aod", 32, 2, 4, 2)
    np.testing.assert_array_equal(obs.data.reshape(2, 2, 2), ch.aods_ris_ue)
    assert observe(ch, "none").dimension == 0
    with pytest.raises(ConfigError):
        observe(ch, "bogus")


def test_full_csi_layout():
    rng = np.random.default_rng(7)
    ch = toy_channels(rng, n=3, n_t=2, m=2, k=2)
    obs = observe(ch, "full_csi").data
    z = np.concatenate([np.vstack([ch.ris_bs[0], ch.ris_bs[1]]).flatten(order="F"),
                        ch.ue_ris[0, 0], ch.ue_ris[0, 1], ch.ue_ris[1, 0], ch.ue_ris[1, 1],
                        ch.direct[0], ch.direct[1]])
    np.testing.assert_array_equal(obs, np.concatenate([z.real, z.imag]))


# stepping -------------------------------------------------------------------------------------

def make_env(seed=0, **kw):
    geometry, space = paper_space(32)
    kw.setdefault("observation_mode", "full_csi")
    return RisEnvironment(geometry, RiceanConfig(), space, RewardSpec.from_dbm(), rng=np.random.default_rng(seed),
                          **kw)


def test_step_determinism():
    actions = [3, 0, 15, 7, 7, 2]
    traces = []
    for _ in range(2):
        env = make_env(11)
        traces.append([env_step(env, a)[0] for a in actions])
    assert traces[0] == traces[1]


def test_step_reward_composition():
    env = make_env(12)
    ch = env.channels
    a = env.space.decode(9)
    r, obs, diag = env.step(9)
    assert r == reward_sum_rate(compute_sinrs(ch, a, env.reward_spec))
    assert diag["channels"] is ch
    np.testing.assert_allclose(diag["rates"], np.log2(1 + diag["sinrs"]))
    assert isinstance(obs, Observation) and obs.dimension == 400
    assert env.channels is not ch


def test_oracle_composition_over_300_steps():
    env = make_env(13, observation_mode="oracle_channels")
    oracle, stepped = [], []
    for _ in range(300):
        idx, best = exhaustive_best_action(env.channels, env.space, env.reward_spec)
        oracle.append(best)
        stepped.append(env.step(idx)[0])
    assert np.mean(stepped) == np.mean(oracle)


def test_mobility_environment_moves_ues():
    env = make_env(14, scenario="mobility")
    start = env.ue_positions()
    for _ in range(10):
        env.step(0)
    moved = np.linalg.norm(env.ue_positions() - start, axis=1)
    np.testing.assert_allclose(moved, 10 * 1.4 * 0.006, rtol=1e-9)


def test_report_noise_only_changes_reported_reward():
    env = make_env(15, sinr_report_noise_db=2.0, report_rng=np.random.default_rng(1))
    r, _, diag = env.step(4)
    assert r != diag["true_reward"]
    with pytest.raises(ConfigError):
        make_env(sinr_report_noise_db=-1.0)


def test_bad_modes():
    with pytest.raises(ConfigError):
        make_env(observation_mode="bogus")
    with pytest.raises(ConfigError):
        make_env(scenario="bogus")
