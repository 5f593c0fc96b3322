# test_scenario.py - Scenario draws, channel model and providers

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.config import SystemConfig, path_loss_db
from src.scenario_providers import (
    FixedScenarioProvider,
    RandomScenarioProvider,
    ScenarioError,
    ScenarioManager,
    ScenarioNotFoundError,
    channel_gain,
    distances_from_uniform,
    draw_positions,
    draw_scenario,
    draw_test_set,
    load_scenarios,
    normalized_log_gain,
    path_loss_gain,
    save_scenarios,
)


# ============================================
# POSITIONS AND CHANNELS
# ============================================

def test_disk_radius_mapping():
    assert distances_from_uniform(1.0, 200.0) == pytest.approx(200.0)
    assert distances_from_uniform(0.25, 200.0) == pytest.approx(100.0)
    print("✓ r = R sqrt(u) endpoints")


def test_positions_are_area_uniform():
    config = SystemConfig(num_users=10 ** 6)
    d = draw_positions(config, np.random.default_rng(1))
    assert d.shape == (10 ** 6,)
    assert np.all((d > 0) & (d <= 200.0))
    assert abs(d.mean() - 400.0 / 3.0) < 0.5
    print(f"✓ Mean distance {d.mean():.3f} (disk mean 133.333)")


def test_path_loss_examples():
    assert path_loss_db(1000.0) == pytest.approx(128.1)
    assert path_loss_db(100.0) == pytest.approx(90.5)
    assert channel_gain(1000.0, fade=1.0) == pytest.approx(10 ** -12.81, rel=1e-12)
    assert channel_gain(100.0, fade=1.0) == pytest.approx(10 ** -9.05, rel=1e-12)
    print("✓ 128.1 + 37.6 log10(d/km) path loss")


def test_channel_gain_rejects_degenerate_inputs(rng):
    with pytest.raises(ScenarioError):
        channel_gain(0.0, rng)
    with pytest.raises(ScenarioError):
        channel_gain(-5.0, rng)
    with pytest.raises(ScenarioError):
        channel_gain(100.0, fade=0.0)
    with pytest.raises(ScenarioError):
        path_loss_gain([10.0, 0.0])


def test_fades_are_positive_and_unit_mean(rng):
    gains = channel_gain(np.full(200000, 100.0), rng)
    fades = gains / path_loss_gain(100.0)
    assert np.all(fades >= 1e-6)
    assert abs(fades.mean() - 1.0) < 0.01


def test_normalized_log_gain_examples():
    config = SystemConfig()
    assert normalized_log_gain(config.normalization_gain, config) == pytest.approx(0.0, abs=1e-12)
    assert normalized_log_gain(10 * config.normalization_gain, config) == pytest.approx(1.0)
    assert normalized_log_gain(path_loss_gain(200.0), config) == pytest.approx(0.0, abs=1e-12)

    explicit = SystemConfig(l_n=10 ** -12.81)
    assert normalized_log_gain(10 ** -9.05, explicit) == pytest.approx(3.76)

    with pytest.raises(ScenarioError):
        normalized_log_gain(0.0, config)
    print("✓ h = log10(g / L_n)")


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=1e-20, max_value=1e-3), st.floats(min_value=1.0001, max_value=1e3))
def test_log_gain_strictly_increasing(g, factor):
    config = SystemConfig()
    assert normalized_log_gain(g * factor, config) > normalized_log_gain(g, config)


# ============================================
# SCENARIOS
# ============================================

def test_state_layout_and_priority_order(rng):
    scenario = draw_scenario(SystemConfig(num_users=1), rng)
    assert scenario.state.shape == (2,)

    config = SystemConfig()
    scenario = draw_scenario(config, rng)
    state = scenario.state
    assert state.shape == (20,)
    assert [u.priority_rank for u in scenario.users] == list(range(1, 11))
    np.testing.assert_array_equal(state[0::2], scenario.log_gains)
    np.testing.assert_array_equal(state[1::2], scenario.omega_min)
    assert np.all((scenario.omega_min >= 0.4) & (scenario.omega_min <= 0.45))
    print("✓ State [h_1, Omega_1, ..., h_K, Omega_K] in sensing order")


def test_same_seed_same_scenarios():
    config = SystemConfig()
    a = draw_test_set(config, episodes=5, iterations=4, seed=9)
    b = draw_test_set(config, episodes=5, iterations=4, seed=9)
    assert len(a) == 20
    for x, y in zip(a, b):
        assert x == y
        np.testing.assert_array_equal(x.state, y.state)


def test_requirement_and_rank_distribution():
    config = SystemConfig()
    rng = np.random.default_rng(2)
    n = 30000
    omegas = np.empty((n, config.num_users))
    rank_of_first = np.empty(n, dtype=int)
    for i in range(n):
        scenario = draw_scenario(config, rng)
        omegas[i] = scenario.omega_min
        rank_of_first[i] = next(u.priority_rank for u in scenario.users if u.user_id == 0)

    assert abs(omegas.mean() - 0.425) < 0.002
    freq = np.bincount(rank_of_first, minlength=config.num_users + 1)[1:] / n
    assert np.all(np.abs(freq - 1.0 / config.num_users) < 0.01)
    print(f"✓ Omega_min mean {omegas.mean():.4f}, rank frequencies within 1% of 1/K")


def test_positions_fixed_within_episode(rng):
    provider = RandomScenarioProvider(SystemConfig(num_users=4))
    episode = provider.episode(5, rng)
    distances = [sorted(s.distances) for s in episode]
    for d in distances[1:]:
        np.testing.assert_array_equal(d, distances[0])

    provider.reset_episode(rng)
    assert sorted(provider.next_scenario(rng).distances) != distances[0]


# ============================================
# PROVIDERS
# ============================================

def test_manager_lookup_and_caching():
    manager = ScenarioManager(SystemConfig(num_users=3), provider_configs={'fixed': {'seed': 4}})
    assert set(manager.get_available_providers()) >= {'random', 'fixed', 'csv'}
    fixed = manager.get_provider('fixed')
    assert manager.get_provider('fixed') is fixed
    assert isinstance(fixed, FixedScenarioProvider)
    assert fixed.get_provider_info()['stochastic'] is False

    with pytest.raises(ScenarioNotFoundError):
        manager.get_provider('satellite')


def test_fixed_provider_repeats(rng):
    provider = FixedScenarioProvider(SystemConfig(num_users=3), {'seed': 1})
    provider.reset_episode(rng)
    assert provider.next_scenario(rng) is provider.next_scenario(rng)


def test_csv_replay(tmp_path):
    config = SystemConfig(num_users=4)
    scenarios = draw_test_set(config, episodes=3, iterations=2, seed=5)
    path = save_scenarios(scenarios, tmp_path / 'test_set.csv')

    loaded = load_scenarios(path, config)
    assert len(loaded) == 6
    for original, replayed in zip(scenarios, loaded):
        np.testing.assert_array_equal(original.gains, replayed.gains)
        np.testing.assert_array_equal(original.omega_min, replayed.omega_min)
        np.testing.assert_allclose(original.state, replayed.state, rtol=0, atol=1e-12)

    manager = ScenarioManager(config, 'csv', {'csv': {'path': str(path)}})
    provider = manager.get_provider()
    rng = np.random.default_rng(0)
    replay = [provider.next_scenario(rng) for _ in range(7)]
    assert replay[6] == replay[0]

    with pytest.raises(ScenarioError):
        load_scenarios(path, SystemConfig(num_users=5))
    with pytest.raises(ScenarioNotFoundError):
        load_scenarios(tmp_path / 'missing.csv', config)
    print("✓ Scenario sets replay from CSV")


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
