"""
Hybrid-Action Soft Actor-Critic

Learns generating steps (discrete, per user) and sensing outputs
(continuous, per user) for the LP-guided allocation loop. The actor has a
shared trunk, a step branch emitting K x M logits sampled with
Gumbel-softmax (straight-through one-hot), and a sensing branch fed with
the trunk features concatenated with the chosen one-hots, producing a
squashed-Gaussian d in (0, 1). Twin critics with soft-updated targets and
an auto-tuned temperature complete the learner.

Variants (see ``agent_config_for``):
    lpdrl_f  action filter on the sensing output, RCE for communication
    lpdrl    raw sensing mapping E_s = d E_s_max, RCE for communication
    saqa_fg  fixed step, filter assumes perfect generation (eps = 0)
    jdrl_f   filtered sensing plus learned communication fractions, no RCE

Usage:
    agent = SACAgent(SystemConfig(), agent_config_for('lpdrl_f'), rng)
    env = agent.make_environment(RandomScenarioProvider(system), env_rng)
    env.reset_episode()
    record = agent.train_step(env)
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .allocation_engine import FILTER_MODES, AllocationEngine, AllocationEnvironment, AllocationResult
from .config import ConfigError, SystemConfig, config_hash, config_to_dict, dataclass_from_dict
from .neural_core import (
    CheckpointError,
    DenseNet,
    DenseNetSpec,
    ParameterSet,
    TrainingHaltedError,
    adam_step,
    load_parameters,
    restore_parameters,
    save_parameters,
    sigmoid,
    soft_update,
)
from .scenario_providers import BaseScenarioProvider, Scenario

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
VARIANTS = ('lpdrl_f', 'lpdrl', 'saqa_fg', 'jdrl_f')
D_EDGE = 1e-15


# ============================================
# CONFIGURATION
# ============================================

@dataclass
class AgentConfig:
    """
    Learner hyperparameters.

    Learning rates, soft-update rate, buffer sizes and layer widths are the
    reference training values; gamma, the temperature schedule and the
    Gumbel anneal are set to common SAC practice.

    ``hard_next_action`` feeds the critic target the decoded one-hot step
    of the resampled next action; when False it uses the Gumbel-softmax
    relaxed step instead. The sensing part is the same in both cases.
    """
    variant: str = 'lpdrl_f'
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    temperature_lr: float = 3e-4
    soft_update: float = 0.005
    gamma: float = 0.9
    initial_temperature: float = 0.2
    target_entropy: Optional[float] = None
    gumbel_temperature: float = 1.0
    gumbel_anneal: float = 0.9995
    gumbel_min: float = 0.3
    buffer_capacity: int = 50000
    min_fill: int = 5000
    batch_size: int = 256
    trunk_layers: Tuple[int, ...] = (256, 128)
    step_layers: Tuple[int, ...] = (64,)
    sensing_layers: Tuple[int, ...] = (64,)
    critic_layers: Tuple[int, ...] = (256, 128)
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    filter_mode: str = 'filtered'
    fixed_step: Optional[int] = None
    joint_comm: bool = False
    hard_next_action: bool = True

    def __post_init__(self):
        for name in ('trunk_layers', 'step_layers', 'sensing_layers', 'critic_layers'):
            object.__setattr__(self, name, tuple(int(s) for s in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            ConfigError: If any hyperparameter is outside its domain
        """
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'; choose from {VARIANTS}")
        for name in ('actor_lr', 'critic_lr', 'temperature_lr', 'initial_temperature', 'gumbel_temperature',
                     'gumbel_min'):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.soft_update < 1:
            raise ConfigError(f"soft_update must lie in (0, 1), got {self.soft_update}")
        if not 0 <= self.gamma < 1:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0 < self.gumbel_anneal <= 1:
            raise ConfigError("gumbel_anneal must lie in (0, 1]")
        if self.batch_size < 1 or self.min_fill < self.batch_size or self.buffer_capacity < self.min_fill:
            raise ConfigError("need 1 <= batch_size <= min_fill <= buffer_capacity")
        if len(self.trunk_layers) < 2 or len(self.critic_layers) < 1:
            raise ConfigError("trunk needs at least two layers and critics at least one hidden layer")
        if not self.step_layers or not self.sensing_layers:
            raise ConfigError("step and sensing branches need at least one hidden layer")
        if self.log_std_min >= self.log_std_max:
            raise ConfigError("log_std_min must be below log_std_max")
        if self.filter_mode not in FILTER_MODES:
            raise ConfigError(f"filter_mode must be one of {FILTER_MODES}")


def agent_config_for(variant: str, **overrides) -> AgentConfig:
    """
    Preset for one learner variant.

    Args:
        variant: 'lpdrl_f', 'lpdrl', 'saqa_fg' or 'jdrl_f'
        **overrides: AgentConfig fields to replace (``fixed_step`` is required for saqa_fg)

    Raises:
        ConfigError: For unknown variants or a missing fixed step
    """
    presets = {
        'lpdrl_f': {'filter_mode': 'filtered'},
        'lpdrl': {'filter_mode': 'raw'},
        'saqa_fg': {'filter_mode': 'perfect_generation'},
        'jdrl_f': {'filter_mode': 'filtered', 'joint_comm': True},
    }
    if variant not in presets:
        raise ConfigError(f"unknown variant '{variant}'; choose from {list(presets)}")
    values = {'variant': variant, **presets[variant]}
    values.update({k: v for k, v in overrides.items() if v is not None})
    if variant == 'saqa_fg' and values.get('fixed_step') is None:
        raise ConfigError("saqa_fg needs a fixed generating step (fixed_step)")
    return dataclass_from_dict(AgentConfig, values)


# ============================================
# REPLAY
# ============================================

@dataclass
class Transition:
    """(s, a, r, s') with a = [normalized steps (K), sensing outputs d, (fractions c)]."""
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=np.float64)
        self.action = np.asarray(self.action, dtype=np.float64)
        self.next_state = np.asarray(self.next_state, dtype=np.float64)
        if not (np.all(self.action >= 0) and np.all(self.action <= 1)):
            raise ValueError("action components must lie in [0, 1]")
        if not np.isfinite(self.reward):
            raise TrainingHaltedError("non-finite reward")

    def decode_steps(self, system: SystemConfig) -> np.ndarray:
        """Generating steps encoded in the first K action components."""
        k = system.num_users
        span = system.num_steps - 1
        return system.z_min + np.rint(self.action[:k] * span).astype(np.int64)


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of transitions; oldest entries are overwritten first."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        self.capacity = int(capacity)
        self.states = np.zeros((self.capacity, state_dim))
        self.actions = np.zeros((self.capacity, action_dim))
        self.rewards = np.zeros(self.capacity)
        self.next_states = np.zeros((self.capacity, state_dim))
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, transition: Transition) -> None:
        i = self._next
        self.states[i] = transition.state
        self.actions[i] = transition.action
        self.rewards[i] = transition.reward
        self.next_states[i] = transition.next_state
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Uniform batch without replacement."""
        if batch_size > self.size:
            raise ValueError(f"cannot sample {batch_size} from {self.size} transitions")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return Batch(
            states=self.states[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_states=self.next_states[idx],
        )


# ============================================
# ACTOR
# ============================================

def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


@dataclass
class ActorNoise:
    """Exogenous noise of one actor sample (for reproducible re-evaluation)."""
    gumbel: Optional[np.ndarray]
    normal: np.ndarray


@dataclass
class ActorOutput:
    """Decoded actions, log-probabilities and everything backward needs."""
    step_index: np.ndarray
    action: np.ndarray
    soft_action: np.ndarray
    cont: np.ndarray
    log_prob: np.ndarray
    mode: str
    noise: ActorNoise
    caches: Dict[str, Any] = field(default_factory=dict)


class HybridActor:
    """
    Shared trunk, Gumbel-softmax step branch and squashed-Gaussian sensing branch.

    Args:
        num_users: K
        num_steps: M = z_max - z_min + 1
        n_cont: Continuous outputs per state (K, or 2K with communication fractions)
        config: Layer widths, log-std clip, fixed step
        rng: Initialization stream
    """

    def __init__(self, num_users: int, num_steps: int, n_cont: int, config: AgentConfig,
                 rng: np.random.Generator):
        self.k = num_users
        self.m = num_steps
        self.n_cont = n_cont
        self.config = config
        self.fixed = config.fixed_step is not None

        trunk = list(config.trunk_layers)
        self.trunk = DenseNet(DenseNetSpec([2 * num_users, *trunk], ['relu'] * len(trunk)), rng)
        features = trunk[-1]
        self.step_net = None
        if not self.fixed:
            self.step_net = DenseNet(
                DenseNetSpec.mlp(features, config.step_layers, num_users * num_steps, output_gain=0.01), rng
            )
        self.sensing_net = DenseNet(
            DenseNetSpec.mlp(features + num_users * num_steps, config.sensing_layers, 2 * n_cont,
                             output_gain=0.01),
            rng,
        )
        self.levels = np.arange(num_steps) / (num_steps - 1) if num_steps > 1 else np.zeros(1)

    @property
    def networks(self) -> Dict[str, DenseNet]:
        nets = {'trunk': self.trunk, 'sensing': self.sensing_net}
        if self.step_net is not None:
            nets['step'] = self.step_net
        return nets

    def forward(self, states, rng: Optional[np.random.Generator], mode: str = 'sample',
                gumbel_temperature: float = 1.0, noise: Optional[ActorNoise] = None,
                fixed_index: Optional[int] = None) -> ActorOutput:
        """
        Sample (or pick deterministically) a hybrid action.

        Args:
            states: (B, 2K) states
            rng: Noise stream (unused in deterministic mode or with ``noise``)
            mode: 'sample' or 'deterministic'
            gumbel_temperature: Softmax temperature of the Gumbel relaxation
            noise: Explicit noise to replay
            fixed_index: Step index used by fixed-step learners

        Raises:
            TrainingHaltedError: On non-finite logits or sensing outputs
        """
        if mode not in ('sample', 'deterministic'):
            raise ValueError(f"unknown mode '{mode}'")
        states = np.atleast_2d(np.asarray(states, dtype=np.float64))
        b, k, m, n = states.shape[0], self.k, self.m, self.n_cont
        sample = mode == 'sample'

        feat, trunk_cache = self.trunk.forward(states)
        caches: Dict[str, Any] = {'trunk': trunk_cache, 'features': feat}

        gumbel = None
        if self.step_net is not None:
            logits_flat, step_cache = self.step_net.forward(feat)
            logits = logits_flat.reshape(b, k, m)
            if not np.all(np.isfinite(logits)):
                raise TrainingHaltedError("non-finite step logits")
            log_p = _log_softmax(logits)
            if sample:
                gumbel = noise.gumbel if noise is not None else rng.gumbel(size=logits.shape)
                y_soft = _softmax((logits + gumbel) / gumbel_temperature)
            else:
                y_soft = _softmax(logits)
            index = np.argmax(y_soft, axis=-1)
            hard = np.eye(m)[index]
            logp_cat = (hard * log_p).sum(axis=(1, 2))
            caches.update({'step': step_cache, 'log_p': log_p, 'y_soft': y_soft, 'hard': hard})
        else:
            index = np.full((b, k), fixed_index if fixed_index is not None else 0, dtype=np.int64)
            hard = np.eye(m)[index]
            y_soft = hard
            logp_cat = np.zeros(b)
            caches['hard'] = hard

        sens_in = np.concatenate([feat, hard.reshape(b, k * m)], axis=1)
        out, sens_cache = self.sensing_net.forward(sens_in)
        mu, raw_ls = out[:, :n], out[:, n:]
        ls = np.clip(raw_ls, self.config.log_std_min, self.config.log_std_max)
        std = np.exp(ls)
        if sample:
            xi = noise.normal if noise is not None else rng.standard_normal((b, n))
        else:
            xi = np.zeros((b, n))
        u = mu + std * xi
        if not np.all(np.isfinite(u)):
            raise TrainingHaltedError("non-finite sensing outputs")
        cont = np.clip(sigmoid(u), D_EDGE, 1.0 - D_EDGE)
        logp_cont = (-0.5 * xi ** 2 - ls - 0.5 * LOG_2PI + _softplus(u) + _softplus(-u)).sum(axis=1)
        caches.update({'sensing': sens_cache, 'raw_ls': raw_ls, 'std': std, 'xi': xi, 'u': u})

        z_norm = self.levels[index]
        soft_norm = (y_soft * self.levels).sum(axis=-1)
        return ActorOutput(
            step_index=index,
            action=np.concatenate([z_norm, cont], axis=1),
            soft_action=np.concatenate([soft_norm, cont], axis=1),
            cont=cont,
            log_prob=logp_cat + logp_cont,
            mode=mode,
            noise=ActorNoise(gumbel=gumbel, normal=xi),
            caches={**caches, 'temperature': gumbel_temperature},
        )

    def backward(self, out: ActorOutput, action_grad, log_prob_grad,
                 straight_through: bool = True) -> Dict[str, List[np.ndarray]]:
        """
        Gradients of sum(action_grad * action) + sum(log_prob_grad * log_prob).

        The step one-hots pass gradients to the logits straight-through the
        Gumbel-softmax relaxation (sample mode only). With
        ``straight_through=False`` the one-hots are treated as constants,
        which is the exact derivative of the sampled computation.
        """
        c = out.caches
        k, m, n = self.k, self.m, self.n_cont
        b = out.action.shape[0]
        g_action = np.asarray(action_grad, dtype=np.float64).reshape(b, k + n)
        g_logp = np.asarray(log_prob_grad, dtype=np.float64).reshape(b)

        d = out.cont
        g_u = g_action[:, k:] * d * (1.0 - d) + g_logp[:, None] * (2.0 * d - 1.0)
        in_clip = (c['raw_ls'] >= self.config.log_std_min) & (c['raw_ls'] <= self.config.log_std_max)
        g_ls = (g_u * c['std'] * c['xi'] - g_logp[:, None]) * in_clip
        sens_grads, g_sens_in = self.sensing_net.backward(c['sensing'], np.concatenate([g_u, g_ls], axis=1))

        features = c['features'].shape[1]
        g_feat = g_sens_in[:, :features]
        grads = {'sensing': sens_grads}

        if self.step_net is not None:
            g_hard = g_sens_in[:, features:].reshape(b, k, m)
            g_hard = g_hard + g_action[:, :k, None] * self.levels[None, None, :]
            g_hard = g_hard + g_logp[:, None, None] * c['log_p']
            g_logits = g_logp[:, None, None] * (c['hard'] - np.exp(c['log_p']))
            if straight_through and out.mode == 'sample':
                y = c['y_soft']
                inner = (y * g_hard).sum(axis=-1, keepdims=True)
                g_logits = g_logits + y * (g_hard - inner) / c['temperature']
            step_grads, g_feat_step = self.step_net.backward(c['step'], g_logits.reshape(b, k * m))
            grads['step'] = step_grads
            g_feat = g_feat + g_feat_step

        grads['trunk'], _ = self.trunk.backward(c['trunk'], g_feat)
        return grads


# ============================================
# AGENT
# ============================================

class SACAgent:
    """
    Hybrid-action SAC learner with twin critics and temperature tuning.

    Args:
        system: System constants (K, step range)
        config: Learner hyperparameters
        rng: Stream for initialization, exploration and replay sampling
    """

    def __init__(self, system: SystemConfig, config: AgentConfig, rng: np.random.Generator):
        if config.fixed_step is not None and not system.z_min <= config.fixed_step <= system.z_max:
            raise ConfigError(f"fixed_step {config.fixed_step} outside [{system.z_min}, {system.z_max}]")
        self.system = system
        self.config = config
        self.rng = rng

        k, m = system.num_users, system.num_steps
        self.n_cont = 2 * k if config.joint_comm else k
        self.state_dim = 2 * k
        self.action_dim = k + self.n_cont

        self.actor = HybridActor(k, m, self.n_cont, config, rng)
        critic_spec = DenseNetSpec.mlp(self.state_dim + self.action_dim, config.critic_layers, 1)
        self.critics = [DenseNet(critic_spec, rng), DenseNet(critic_spec, rng)]
        self.targets = [critic.copy() for critic in self.critics]
        self.log_temperature = ParameterSet(arrays=[np.array([math.log(config.initial_temperature)])])
        self.gumbel_temperature = config.gumbel_temperature
        self.buffer = ReplayBuffer(config.buffer_capacity, self.state_dim, self.action_dim)

        if config.target_entropy is not None:
            self.target_entropy = float(config.target_entropy)
        else:
            discrete = 0.0 if config.fixed_step is not None else k * math.log(m)
            self.target_entropy = -0.5 * (self.n_cont + discrete)

        self.iteration = 0
        self.updates = 0
        self.reference_avg_caqa: Optional[float] = None

    # --------------------------------------------
    # Acting
    # --------------------------------------------

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_temperature.arrays[0][0]))

    @property
    def fixed_index(self) -> Optional[int]:
        if self.config.fixed_step is None:
            return None
        return int(self.config.fixed_step - self.system.z_min)

    def actor_forward(self, states, mode: str = 'sample', noise: Optional[ActorNoise] = None) -> ActorOutput:
        return self.actor.forward(states, self.rng, mode, self.gumbel_temperature, noise, self.fixed_index)

    def act(self, state, deterministic: bool = False) -> Tuple[np.ndarray, np.ndarray, Optional[np.ndarray], ActorOutput]:
        """
        Decide for one state.

        Returns:
            (steps z, sensing outputs d, communication fractions or None, raw actor output)
        """
        out = self.actor_forward(np.asarray(state)[None, :], 'deterministic' if deterministic else 'sample')
        k = self.system.num_users
        z = self.system.z_min + out.step_index[0]
        d = out.cont[0, :k]
        c = out.cont[0, k:] if self.config.joint_comm else None
        return z, d, c, out

    def make_engine(self) -> AllocationEngine:
        return AllocationEngine(self.system, filter_mode=self.config.filter_mode)

    def make_environment(self, provider: BaseScenarioProvider, rng: np.random.Generator) -> AllocationEnvironment:
        return AllocationEnvironment(provider, self.make_engine(), rng)

    def decide(self, scenario: Scenario, engine: Optional[AllocationEngine] = None) -> AllocationResult:
        """Deterministic decision on a scenario, scored by the engine."""
        engine = engine or self.make_engine()
        z, d, c, _ = self.act(scenario.state, deterministic=True)
        return engine.run(scenario, z, d, c)

    # --------------------------------------------
    # Learning
    # --------------------------------------------

    def _q(self, nets: List[DenseNet], states, actions):
        q_in = np.concatenate([states, actions], axis=1)
        outputs = [net.forward(q_in) for net in nets]
        return [o[0][:, 0] for o in outputs], [o[1] for o in outputs]

    def critic_targets(self, batch: Batch) -> np.ndarray:
        """
        y = r + gamma (min_j Q'_j(s', a') - rho log pi(a'|s')), a' resampled.

        a' carries the hard decoded step when ``hard_next_action`` is set,
        otherwise the relaxed (soft) step.
        """
        if self.config.gamma == 0:
            return batch.rewards.copy()
        nxt = self.actor_forward(batch.next_states, 'sample')
        next_actions = nxt.action if self.config.hard_next_action else nxt.soft_action
        (tq1, tq2), _ = self._q(self.targets, batch.next_states, next_actions)
        return batch.rewards + self.config.gamma * (np.minimum(tq1, tq2) - self.temperature * nxt.log_prob)

    def critic_update(self, batch: Batch) -> Tuple[float, float]:
        """
        Regress both critics onto the shared target.

        Raises:
            TrainingHaltedError: On a non-finite loss
        """
        y = self.critic_targets(batch)
        b = y.size
        losses = []
        for critic in self.critics:
            q, cache = critic.forward(np.concatenate([batch.states, batch.actions], axis=1))
            diff = q[:, 0] - y
            loss = float(np.mean(diff ** 2))
            if not np.isfinite(loss):
                raise TrainingHaltedError("non-finite critic loss")
            grads, _ = critic.backward(cache, (2.0 * diff / b)[:, None])
            adam_step(critic.params, grads, self.config.critic_lr)
            losses.append(loss)
        return losses[0], losses[1]

    def actor_update(self, batch: Batch) -> Tuple[float, np.ndarray]:
        """
        Minimize mean(rho log pi(a|s) - min_j Q_j(s, a)) with a reparameterized.

        Returns:
            (loss, log-probabilities of the sampled actions)
        """
        out = self.actor_forward(batch.states, 'sample')
        (q1, q2), (c1, c2) = self._q(self.critics, batch.states, out.action)
        rho = self.temperature
        b = q1.size
        loss = float(np.mean(rho * out.log_prob - np.minimum(q1, q2)))
        if not np.isfinite(loss):
            raise TrainingHaltedError("non-finite actor loss")

        first = q1 <= q2
        _, dx1 = self.critics[0].backward(c1, np.where(first, -1.0 / b, 0.0)[:, None])
        _, dx2 = self.critics[1].backward(c2, np.where(first, 0.0, -1.0 / b)[:, None])
        action_grad = (dx1 + dx2)[:, self.state_dim:]

        grads = self.actor.backward(out, action_grad, np.full(b, rho / b))
        for name, net in self.actor.networks.items():
            adam_step(net.params, grads[name], self.config.actor_lr)
        return loss, out.log_prob

    def temperature_update(self, batch: Batch, log_probs: Optional[np.ndarray] = None) -> float:
        """Gradient step on J(rho) = E[-rho (log pi + H_target)] over log rho."""
        if log_probs is None:
            log_probs = self.actor_forward(batch.states, 'sample').log_prob
        grad = -self.temperature * float(np.mean(log_probs + self.target_entropy))
        adam_step(self.log_temperature, [np.array([grad])], self.config.temperature_lr)
        return self.temperature

    def update(self) -> Dict[str, float]:
        """One critic, actor, temperature and target update from a replay batch."""
        batch = self.buffer.sample(self.config.batch_size, self.rng)
        critic_1, critic_2 = self.critic_update(batch)
        actor_loss, log_probs = self.actor_update(batch)
        rho = self.temperature_update(batch, log_probs)
        for critic, target in zip(self.critics, self.targets):
            soft_update(critic.params, target.params, self.config.soft_update)
        self.gumbel_temperature = max(self.gumbel_temperature * self.config.gumbel_anneal, self.config.gumbel_min)
        self.updates += 1
        return {
            'critic_loss_1': critic_1,
            'critic_loss_2': critic_2,
            'actor_loss': actor_loss,
            'temperature': rho,
            'entropy': float(-np.mean(log_probs)),
        }

    def train_step(self, env: AllocationEnvironment) -> Dict[str, Any]:
        """
        One interaction plus (once the buffer is warm) one learning update.

        Returns:
            Metrics record of this iteration
        """
        state = env.state
        z, d, c, out = self.act(state)
        result, next_state = env.step(z, d, c)

        self.buffer.add(Transition(state=state, action=out.action[0], reward=result.reward, next_state=next_state))

        record: Dict[str, Any] = {'iteration': self.iteration, **result.metrics}
        if len(self.buffer) >= self.config.min_fill:
            record.update(self.update())
        record['gumbel_temperature'] = self.gumbel_temperature
        self.iteration += 1
        return record

    # --------------------------------------------
    # Checkpoints
    # --------------------------------------------

    def _parameter_sets(self) -> Dict[str, ParameterSet]:
        named = {f'actor.{name}': net.params for name, net in self.actor.networks.items()}
        for i, (critic, target) in enumerate(zip(self.critics, self.targets), start=1):
            named[f'critic{i}'] = critic.params
            named[f'target{i}'] = target.params
        named['log_temperature'] = self.log_temperature
        return named

    def save(self, directory) -> Path:
        """
        Write ``agent.params`` (text checkpoint) and ``agent.json`` (metadata).

        The replay buffer and optimizer moments are not stored.
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_parameters(directory / 'agent.params', self._parameter_sets())
        metadata = {
            'iteration': self.iteration,
            'updates': self.updates,
            'gumbel_temperature': self.gumbel_temperature,
            'reference_avg_caqa': self.reference_avg_caqa,
            'rng_state': self.rng.bit_generator.state,
            'config_hash': config_hash(system=self.system, agent=self.config),
            'system': config_to_dict(self.system),
            'agent': config_to_dict(self.config),
        }
        with open(directory / 'agent.json', 'w') as f:
            json.dump(metadata, f, indent=2)
        logger.info("Saved checkpoint to %s (iteration %d)", directory, self.iteration)
        return directory

    @classmethod
    def load(cls, directory, rng: Optional[np.random.Generator] = None) -> 'SACAgent':
        """
        Rebuild an agent from ``save`` output, restoring its RNG state.

        Raises:
            CheckpointError: If files are missing or do not match the stored config
        """
        directory = Path(directory)
        meta_path = directory / 'agent.json'
        if not meta_path.exists():
            raise CheckpointError(f"Checkpoint metadata not found: {meta_path}")
        with open(meta_path) as f:
            metadata = json.load(f)

        system = dataclass_from_dict(SystemConfig, metadata['system'])
        config = dataclass_from_dict(AgentConfig, metadata['agent'])
        if config_hash(system=system, agent=config) != metadata['config_hash']:
            raise CheckpointError("config hash mismatch in checkpoint metadata")

        if rng is None:
            rng = np.random.default_rng()
            rng.bit_generator.state = metadata['rng_state']
        agent = cls(system, config, np.random.default_rng(0))
        agent.rng = rng

        stored = load_parameters(directory / 'agent.params')
        for name, pset in agent._parameter_sets().items():
            if name not in stored:
                raise CheckpointError(f"checkpoint has no parameters for '{name}'")
            restore_parameters(pset, stored[name], name)

        agent.iteration = int(metadata['iteration'])
        agent.updates = int(metadata['updates'])
        agent.gumbel_temperature = float(metadata['gumbel_temperature'])
        agent.reference_avg_caqa = metadata.get('reference_avg_caqa')
        return agent


def agent_summary(agent: SACAgent) -> Dict[str, Any]:
    """Shapes and key settings, for logs."""
    return {
        'variant': agent.config.variant,
        'state_dim': agent.state_dim,
        'action_dim': agent.action_dim,
        'actor_parameters': sum(net.params.size for net in agent.actor.networks.values()),
        'critic_parameters': agent.critics[0].params.size,
        'target_entropy': agent.target_entropy,
        'gamma': agent.config.gamma,
        'batch_size': agent.config.batch_size,
    }
