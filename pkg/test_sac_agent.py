# test_sac_agent.py - Action filter, allocation engine and the hybrid SAC learner

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import json

import numpy as np
import pytest

from src.allocation_engine import (
    AllocationEngine,
    action_filter,
    fractions_to_energy,
    lp_guided_reward,
    minimum_sensing_energy,
)
from src.config import ConfigError, SystemConfig
from src.neural_core import CheckpointError, TrainingHaltedError, gradient_check
from src.sac_agent import D_EDGE, AgentConfig, ReplayBuffer, SACAgent, Transition, agent_config_for
from src.scenario_providers import FixedScenarioProvider, RandomScenarioProvider, draw_scenario
from src.service_model import content_accuracy
from src.verification import actor_gradient_check


def tiny_config(variant='lpdrl_f', **overrides):
    values = dict(trunk_layers=(32, 16), step_layers=(8,), sensing_layers=(8,), critic_layers=(32, 16),
                  batch_size=8, min_fill=16, buffer_capacity=64)
    values.update(overrides)
    return agent_config_for(variant, **values)


def run_steps(agent, steps, seed):
    env = agent.make_environment(RandomScenarioProvider(agent.system), np.random.default_rng(seed))
    env.reset_episode()
    return [agent.train_step(env) for _ in range(steps)]


# ============================================
# ACTION FILTER AND REWARD
# ============================================

def test_filter_endpoints(system, rng):
    z = rng.integers(5, 11, 50)
    omega_min = rng.uniform(0.4, 0.45, 50)
    e_q = minimum_sensing_energy(z, omega_min, system)
    assert np.all(e_q < system.e_s_max)

    low = action_filter(np.zeros(50), z, omega_min, system)
    high = action_filter(np.ones(50), z, omega_min, system)
    np.testing.assert_allclose(low.e_s, e_q)
    np.testing.assert_allclose(high.e_s, system.e_s_max)
    assert not low.flagged.any()

    # the floor gives exactly the required content accuracy
    np.testing.assert_allclose(content_accuracy(e_q, z, system), omega_min, atol=1e-9)
    print("✓ d=0 -> E^q, d=1 -> E_s,max, Theta(E^q) = Omega_min")


def test_filter_flags_unreachable_requirements(system):
    filtered = action_filter([0.3, 0.3], [5, 10], [0.97, 0.42], system)
    assert filtered.flagged.tolist() == [True, False]
    assert filtered.e_s[0] == system.e_s_max
    assert np.isinf(filtered.e_q[0])


def test_filter_modes(system):
    z, omega_min = np.array([5, 8]), np.array([0.44, 0.41])
    raw = action_filter([0.5, 0.0], z, omega_min, system, mode='raw')
    np.testing.assert_allclose(raw.e_s, [0.05, 0.0])

    perfect = minimum_sensing_energy(z, omega_min, system, assume_perfect_generation=True)
    actual = minimum_sensing_energy(z, omega_min, system)
    assert np.all(perfect < actual)
    with pytest.raises(ValueError):
        action_filter([0.5], [5], [0.4], system, mode='coarse')


def test_reward_penalizes_violators(system, rng):
    engine = AllocationEngine(system)
    scenario = draw_scenario(system, rng)
    starved = engine.run(scenario, np.full(10, 5), None, e_s=np.zeros(10))
    assert starved.outcome.num_violators == 10
    assert starved.reward == pytest.approx(starved.outcome.avg_caqa - 1.0)
    assert lp_guided_reward(starved.outcome) == starved.reward


def test_fraction_mapping():
    e_c = fractions_to_energy([1.0, 1.0, 2.0], 0.4, np.array([1.0, 1.0, 0.1]))
    np.testing.assert_allclose(e_c, [0.1, 0.1, 0.1])
    assert not fractions_to_energy([0.0, 0.0], 0.4, np.ones(2)).any()
    assert not fractions_to_energy([1.0, 1.0], -0.1, np.ones(2)).any()


def test_engine_metrics(system, rng):
    result = AllocationEngine(system).run(draw_scenario(system, rng), np.full(10, 7), np.full(10, 0.5))
    for key in ('avg_caqa', 'reward', 'mean_theta', 'mean_quality', 'energy_used', 'violators',
                'filter_flags', 'violations_c1', 'violations_c6'):
        assert key in result.metrics
    assert result.outcome.c2
    assert result.metrics['violations_c3'] == 0 and result.metrics['violations_c4'] == 0


# ============================================
# CONFIGURATION
# ============================================

def test_variant_presets():
    assert agent_config_for('lpdrl').filter_mode == 'raw'
    assert agent_config_for('jdrl_f').joint_comm
    assert agent_config_for('saqa_fg', fixed_step=7).filter_mode == 'perfect_generation'
    with pytest.raises(ConfigError):
        agent_config_for('saqa_fg')
    with pytest.raises(ConfigError):
        agent_config_for('ppo')
    with pytest.raises(ConfigError):
        AgentConfig(gamma=1.0)
    with pytest.raises(ConfigError):
        AgentConfig(batch_size=512, min_fill=256)
    with pytest.raises(ConfigError):
        SACAgent(SystemConfig(), agent_config_for('saqa_fg', fixed_step=12), np.random.default_rng(0))


# ============================================
# REPLAY
# ============================================

def test_replay_ring_overwrites_oldest(rng):
    buffer = ReplayBuffer(capacity=3, state_dim=2, action_dim=1)
    for i in range(5):
        buffer.add(Transition(state=[i, i], action=[0.5], reward=float(i), next_state=[i + 1, i + 1]))
    assert len(buffer) == 3
    assert sorted(buffer.rewards.tolist()) == [2.0, 3.0, 4.0]
    batch = buffer.sample(3, rng)
    assert sorted(batch.rewards.tolist()) == [2.0, 3.0, 4.0]
    with pytest.raises(ValueError):
        buffer.sample(4, rng)


def test_transition_validation():
    with pytest.raises(ValueError):
        Transition(state=[0.0], action=[1.5], reward=0.0, next_state=[0.0])
    with pytest.raises(TrainingHaltedError):
        Transition(state=[0.0], action=[0.5], reward=float('nan'), next_state=[0.0])

    system = SystemConfig(num_users=2)
    t = Transition(state=np.zeros(4), action=[0.0, 1.0, 0.3, 0.7], reward=0.1, next_state=np.zeros(4))
    assert t.decode_steps(system).tolist() == [5, 10]


# ============================================
# ACTOR
# ============================================

def test_action_shapes_and_ranges(small_system):
    agent = SACAgent(small_system, tiny_config(), np.random.default_rng(0))
    state = draw_scenario(small_system, np.random.default_rng(1)).state
    z, d, c, out = agent.act(state)
    assert z.shape == (3,) and d.shape == (3,) and c is None
    assert np.all((z >= 5) & (z <= 10))
    assert np.all((d > 0) & (d < 1))
    assert out.action.shape == (1, agent.action_dim) and agent.action_dim == 6
    assert np.all((out.action >= 0) & (out.action <= 1))
    assert np.isfinite(out.log_prob).all()


def test_deterministic_mode_is_repeatable(small_system):
    agent = SACAgent(small_system, tiny_config(), np.random.default_rng(0))
    state = draw_scenario(small_system, np.random.default_rng(1)).state
    a = agent.act(state, deterministic=True)
    b = agent.act(state, deterministic=True)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_fixed_step_and_joint_variants(small_system):
    fixed = SACAgent(small_system, tiny_config('saqa_fg', fixed_step=7), np.random.default_rng(0))
    assert 'step' not in fixed.actor.networks
    for _ in range(5):
        z, _, _, _ = fixed.act(np.zeros(6))
        assert z.tolist() == [7, 7, 7]

    joint = SACAgent(small_system, tiny_config('jdrl_f'), np.random.default_rng(0))
    assert joint.action_dim == 9
    _, _, c, _ = joint.act(np.zeros(6))
    assert c.shape == (3,)


def test_uniform_logits_sample_steps_uniformly(small_system):
    agent = SACAgent(small_system, tiny_config(), np.random.default_rng(0))
    step_net = agent.actor.step_net
    step_net.weights[-1][...] = 0.0
    step_net.biases[-1][...] = 0.0

    rng = np.random.default_rng(2)
    out = agent.actor.forward(rng.standard_normal((100000, 6)), rng, mode='sample')
    freq = np.bincount(out.step_index.ravel(), minlength=6) / out.step_index.size
    assert freq.shape == (6,)
    assert np.all(np.abs(freq - 1.0 / 6.0) < 0.01), freq
    assert np.all(out.cont >= D_EDGE) and np.all(out.cont <= 1.0 - D_EDGE)
    assert np.all((out.cont > 0.0) & (out.cont < 1.0))
    print("✓ Equal logits: step frequencies " + ", ".join(f"{f:.4f}" for f in freq))


def test_straight_through_reaches_step_logits(small_system):
    agent = SACAgent(small_system, tiny_config(), np.random.default_rng(0))
    rng = np.random.default_rng(5)
    out = agent.actor_forward(rng.standard_normal((16, 6)), 'sample')
    # loss on the hard step outputs only
    action_grad = np.zeros_like(out.action)
    action_grad[:, :3] = rng.standard_normal((16, 3))
    no_logp = np.zeros(16)

    relaxed = agent.actor.backward(out, action_grad, no_logp, straight_through=True)
    assert any(np.any(g != 0.0) for g in relaxed['step'])
    exact = agent.actor.backward(out, action_grad, no_logp, straight_through=False)
    assert all(not np.any(g) for g in exact['step'])


@pytest.mark.parametrize('variant', ['lpdrl_f', 'jdrl_f'])
def test_actor_gradients(small_system, variant):
    agent = SACAgent(small_system, tiny_config(variant), np.random.default_rng(3))
    rng = np.random.default_rng(4)
    for name, net in agent.actor.networks.items():
        result = gradient_check(net, rng, points=50, name=name)
        assert result.passed, f"{name}: {result.max_rel_error:.3e}"
    composite = actor_gradient_check(agent, rng, points=50)
    assert composite.passed, f"composite: {composite.max_rel_error:.3e}"


# ============================================
# LEARNING
# ============================================

def test_warmup_then_updates(small_system):
    agent = SACAgent(small_system, tiny_config(), np.random.default_rng(0))
    records = run_steps(agent, 24, seed=1)
    assert 'critic_loss_1' not in records[14]
    assert 'critic_loss_1' in records[15]
    assert agent.updates == 9
    last = records[-1]
    for key in ('critic_loss_1', 'critic_loss_2', 'actor_loss', 'temperature', 'entropy', 'gumbel_temperature'):
        assert np.isfinite(last[key])
    assert last['gumbel_temperature'] < 1.0


def test_zero_discount_targets_are_rewards(small_system):
    agent = SACAgent(small_system, tiny_config(gamma=0.0), np.random.default_rng(0))
    run_steps(agent, 16, seed=1)
    batch = agent.buffer.sample(8, agent.rng)
    np.testing.assert_array_equal(agent.critic_targets(batch), batch.rewards)


def test_next_action_step_hard_or_relaxed(small_system):
    hard = SACAgent(small_system, tiny_config(), np.random.default_rng(0))
    relaxed = SACAgent(small_system, tiny_config(hard_next_action=False), np.random.default_rng(0))
    # 15 steps stay below min_fill, so both agents are still identical
    run_steps(hard, 15, seed=1)
    run_steps(relaxed, 15, seed=1)
    batch_hard = hard.buffer.sample(8, hard.rng)
    batch_relaxed = relaxed.buffer.sample(8, relaxed.rng)
    np.testing.assert_array_equal(batch_hard.states, batch_relaxed.states)

    y_hard = hard.critic_targets(batch_hard)
    y_relaxed = relaxed.critic_targets(batch_relaxed)
    assert np.all(np.isfinite(y_hard)) and np.all(np.isfinite(y_relaxed))
    assert not np.array_equal(y_hard, y_relaxed)


def test_critic_loss_decreases_on_frozen_batch(small_system):
    agent = SACAgent(small_system, tiny_config(gamma=0.0, critic_lr=1e-4), np.random.default_rng(0))
    run_steps(agent, 16, seed=1)
    batch = agent.buffer.sample(8, agent.rng)
    losses = [agent.critic_update(batch)[0] for _ in range(12)]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_temperature_tracks_entropy_target(small_system):
    agent = SACAgent(small_system, tiny_config(), np.random.default_rng(0))
    run_steps(agent, 16, seed=1)
    batch = agent.buffer.sample(8, agent.rng)
    start = agent.temperature
    # log pi above -H_target means too little entropy
    raised = agent.temperature_update(batch, np.full(8, 1.0 - agent.target_entropy))
    assert raised > start
    lowered = agent.temperature_update(batch, np.full(8, -5.0 - agent.target_entropy))
    assert lowered < raised


def test_same_seed_same_trajectory(small_system):
    a = SACAgent(small_system, tiny_config(), np.random.default_rng(11))
    b = SACAgent(small_system, tiny_config(), np.random.default_rng(11))
    ra = run_steps(a, 20, seed=2)
    rb = run_steps(b, 20, seed=2)
    assert [r['reward'] for r in ra] == [r['reward'] for r in rb]
    np.testing.assert_array_equal(a.actor.trunk.params.flat(), b.actor.trunk.params.flat())


@pytest.mark.slow
def test_learns_on_repeated_scenario():
    system = SystemConfig()
    config = agent_config_for('lpdrl_f', trunk_layers=(64, 64), step_layers=(32,), sensing_layers=(32,),
                              critic_layers=(64, 64), batch_size=64, min_fill=100, buffer_capacity=5000,
                              actor_lr=5e-4)
    agent = SACAgent(system, config, np.random.default_rng(0))
    env = agent.make_environment(FixedScenarioProvider(system, {'seed': 3}), np.random.default_rng(1))
    env.reset_episode()
    rewards = np.array([agent.train_step(env)['reward'] for _ in range(3000)])

    first, last = rewards[:100].mean(), rewards[-100:].mean()
    assert last > first, (first, last)
    print(f"✓ Mean reward first 100 {first:.4f} -> last 100 {last:.4f}")


# ============================================
# CHECKPOINTS
# ============================================

def test_checkpoint_round_trip(small_system, tmp_path):
    agent = SACAgent(small_system, tiny_config(), np.random.default_rng(0))
    run_steps(agent, 20, seed=1)
    agent.reference_avg_caqa = 0.61
    agent.save(tmp_path / 'ckpt')

    loaded = SACAgent.load(tmp_path / 'ckpt')
    assert loaded.iteration == 20 and loaded.updates == agent.updates
    assert loaded.reference_avg_caqa == 0.61
    assert loaded.gumbel_temperature == agent.gumbel_temperature
    for (name, pa), pb in zip(agent._parameter_sets().items(), loaded._parameter_sets().values()):
        np.testing.assert_array_equal(pa.flat(), pb.flat(), err_msg=name)

    scenario = draw_scenario(small_system, np.random.default_rng(5))
    assert agent.decide(scenario).metrics == loaded.decide(scenario).metrics
    # the restored stream continues where the saved one stopped
    assert loaded.rng.random() == agent.rng.random()


def test_checkpoint_rejects_tampering(small_system, tmp_path):
    agent = SACAgent(small_system, tiny_config(), np.random.default_rng(0))
    directory = agent.save(tmp_path / 'ckpt')
    with pytest.raises(CheckpointError):
        SACAgent.load(tmp_path / 'missing')

    meta = json.loads((directory / 'agent.json').read_text())
    meta['agent']['gamma'] = 0.5
    (directory / 'agent.json').write_text(json.dumps(meta))
    with pytest.raises(CheckpointError):
        SACAgent.load(directory)


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
