# src/allocation_engine.py
"""
Allocation engine: policy outputs -> evaluated allocation.

A policy chooses generating steps z and raw sensing outputs d in [0, 1]
(and, for the fully joint learner, communication fractions c). The action
filter maps d onto [E^q, E_s,max], RCE (or the fraction mapping) sets the
communication energy, and the service model scores the result.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .comra_rce import build_instance, max_comm_energy, rce_allocate
from .config import SystemConfig
from .scenario_providers import BaseScenarioProvider, Scenario
from .service_model import Allocation, ServiceOutcome, aeg, evaluate, inverse_sensing_accuracy, timeline

logger = logging.getLogger(__name__)

FILTER_MODES = ('filtered', 'raw', 'perfect_generation')


@dataclass
class FilteredAction:
    """Sensing energies after the action filter."""
    e_s: np.ndarray
    e_q: np.ndarray
    flagged: np.ndarray


def minimum_sensing_energy(z, omega_min, config: SystemConfig, assume_perfect_generation: bool = False):
    """
    E^q = T_s P_s Upsilon^-1(Omega_min / (1 - eps(z))); +inf where unreachable.
    """
    omega_min = np.asarray(omega_min, dtype=np.float64)
    eps = np.zeros_like(omega_min) if assume_perfect_generation else aeg(z, config)
    target = omega_min / (1.0 - eps)
    reachable = target < config.xi
    n_q = inverse_sensing_accuracy(np.where(reachable, target, 0.0), config)
    return np.where(reachable, config.t_s * config.p_s * n_q, np.inf)


def action_filter(d, z, omega_min, config: SystemConfig, mode: str = 'filtered') -> FilteredAction:
    """
    Map raw sensing outputs onto sensing energies.

    Modes:
        filtered: E_s = d (E_s_max - E^q) + E^q
        perfect_generation: same, with E^q computed as if eps = 0
        raw: E_s = d E_s_max (no floor)

    Users whose E^q is unreachable or above E_s_max are clamped to E_s_max
    and flagged; the reward penalty handles them.
    """
    if mode not in FILTER_MODES:
        raise ValueError(f"unknown filter mode '{mode}'; choose from {FILTER_MODES}")
    d = np.clip(np.asarray(d, dtype=np.float64), 0.0, 1.0)

    e_q = minimum_sensing_energy(z, omega_min, config, assume_perfect_generation=(mode == 'perfect_generation'))
    flagged = e_q > config.e_s_max

    if mode == 'raw':
        e_s = d * config.e_s_max
    else:
        safe_q = np.where(flagged, config.e_s_max, e_q)
        e_s = np.where(flagged, config.e_s_max, d * (config.e_s_max - safe_q) + safe_q)
    return FilteredAction(e_s=np.minimum(e_s, config.e_s_max), e_q=e_q, flagged=flagged)


def lp_guided_reward(outcome: ServiceOutcome) -> float:
    """AvgCAQA minus V/K, V the number of users below their minimum CAQA."""
    violators = outcome.num_violators
    if violators == 0:
        return outcome.avg_caqa
    return outcome.avg_caqa - violators / outcome.num_users


def fractions_to_energy(c, e_r: float, e_max_comm) -> np.ndarray:
    """
    Communication energies from fractions of the residual budget.

    E_c = c E_r / sum(c), clipped to each user's useful maximum.
    """
    c = np.clip(np.asarray(c, dtype=np.float64), 0.0, None)
    total = c.sum()
    if e_r <= 0 or total <= 0:
        return np.zeros_like(c)
    return np.minimum(c * (e_r / total), e_max_comm)


@dataclass
class AllocationResult:
    """Result of scoring one decision."""
    allocation: Allocation
    outcome: ServiceOutcome
    reward: float
    e_q: np.ndarray
    flagged: np.ndarray
    metrics: Dict[str, float] = field(default_factory=dict)


class AllocationEngine:
    """
    Turns (steps, sensing outputs[, fractions]) into a scored allocation.

    Args:
        config: System constants
        filter_mode: One of FILTER_MODES
        assume_perfect_accuracy: RCE ranks and floors with Theta = 1
    """

    def __init__(self, config: SystemConfig, filter_mode: str = 'filtered',
                 assume_perfect_accuracy: bool = False):
        if filter_mode not in FILTER_MODES:
            raise ValueError(f"unknown filter mode '{filter_mode}'")
        self.config = config
        self.filter_mode = filter_mode
        self.assume_perfect_accuracy = assume_perfect_accuracy

    def run(self, scenario: Scenario, z, d, comm_fractions=None,
            e_s: Optional[np.ndarray] = None) -> AllocationResult:
        """
        Score one decision.

        Args:
            scenario: Users in priority order
            z: Generating steps (integers in [z_min, z_max])
            d: Raw sensing outputs in [0, 1] (ignored when ``e_s`` is given)
            comm_fractions: Fractions of the residual budget; RCE when None
            e_s: Sensing energies that bypass the filter (fixed-proportion policies)

        Returns:
            AllocationResult
        """
        z = np.asarray(z, dtype=np.int64)
        if e_s is None:
            filtered = action_filter(d, z, scenario.omega_min, self.config, self.filter_mode)
        else:
            e_s = np.asarray(e_s, dtype=np.float64)
            e_q = minimum_sensing_energy(z, scenario.omega_min, self.config)
            filtered = FilteredAction(e_s=e_s, e_q=e_q, flagged=e_q > self.config.e_s_max)

        if comm_fractions is None:
            instance = build_instance(scenario, filtered.e_s, z, self.config, self.assume_perfect_accuracy)
            e_c = rce_allocate(instance)
        else:
            e_max_comm = max_comm_energy(timeline(filtered.e_s, z, self.config), scenario.gains, self.config)
            e_r = float(self.config.e_max - filtered.e_s.sum())
            e_c = fractions_to_energy(comm_fractions, e_r, e_max_comm)

        allocation = Allocation(e_s=filtered.e_s, z=z, e_c=e_c)
        outcome = evaluate(scenario, allocation, self.config)
        reward = lp_guided_reward(outcome)
        return AllocationResult(
            allocation=allocation,
            outcome=outcome,
            reward=reward,
            e_q=filtered.e_q,
            flagged=filtered.flagged,
            metrics=self._calculate_metrics(outcome, reward, filtered.flagged),
        )

    def _calculate_metrics(self, outcome: ServiceOutcome, reward: float, flagged: np.ndarray) -> Dict[str, float]:
        metrics = {
            'avg_caqa': outcome.avg_caqa,
            'reward': reward,
            'mean_theta': outcome.mean_theta,
            'mean_quality': outcome.mean_quality,
            'energy_used': outcome.total_energy,
            'violators': outcome.num_violators,
            'filter_flags': int(np.sum(flagged)),
        }
        metrics.update({f'violations_{name}': count for name, count in outcome.violation_counts().items()})
        return metrics


class AllocationEnvironment:
    """
    Episodic environment around a scenario provider.

    The state is the current scenario's interleaved [h, Omega_min] vector;
    ``step`` scores the decision and advances to the next scenario.
    """

    def __init__(self, provider: BaseScenarioProvider, engine: AllocationEngine,
                 rng: np.random.Generator):
        self.provider = provider
        self.engine = engine
        self.rng = rng
        self.scenario: Optional[Scenario] = None

    @property
    def config(self) -> SystemConfig:
        return self.engine.config

    @property
    def state(self) -> np.ndarray:
        if self.scenario is None:
            raise RuntimeError("call reset_episode() first")
        return self.scenario.state

    def reset_episode(self) -> np.ndarray:
        """Re-draw positions and return the first state."""
        self.provider.reset_episode(self.rng)
        self.scenario = self.provider.next_scenario(self.rng)
        return self.scenario.state

    def step(self, z, d, comm_fractions=None) -> Tuple[AllocationResult, np.ndarray]:
        """Score the decision on the current scenario, then advance."""
        if self.scenario is None:
            self.reset_episode()
        result = self.engine.run(self.scenario, z, d, comm_fractions)
        self.scenario = self.provider.next_scenario(self.rng)
        return result, self.scenario.state
