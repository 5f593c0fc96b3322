"""
Policy Library - Allocation Policies and Reference Baselines

This module is the registry of every allocation policy the harness can
evaluate. Each policy is a function decorated with @policy, which records
display metadata and parameter specs so the CLI can list, validate and
select policies by name.

Usage:
    from src.baselines import get_policy, get_all_policies

    cgq = get_policy('cgq_fsg')
    result = cgq['function'](scenario, system, alpha=0.2)
    result.outcome.avg_caqa

Learned policies take a trained SACAgent of the matching variant via the
``agent`` keyword.
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from .allocation_engine import AllocationEngine, AllocationResult
from .config import ConfigError, SystemConfig
from .scenario_providers import Scenario

logger = logging.getLogger(__name__)


class PolicyNotFoundError(KeyError):
    """Raised when a policy name is not registered."""
    pass


# ============================================
# METADATA SYSTEM
# ============================================

@dataclass
class PolicyMetadata:
    """
    Describes a policy for discovery and CLI validation.

    Attributes:
        name: Internal identifier (snake_case)
        display_name: Name used in summaries
        description: Help text
        kind: 'heuristic', 'oracle' or 'learned'
        parameters: Parameter specs ({'type', 'min', 'max', 'default', ...})
        agent_variant: SAC variant a learned policy needs, else None
    """
    name: str
    display_name: str
    description: str
    kind: str
    parameters: Dict[str, Dict[str, Any]]
    agent_variant: Optional[str] = None


POLICY_REGISTRY: Dict[str, Dict[str, Any]] = {}


def policy(name: str, display_name: str, description: str, kind: str = 'heuristic',
           parameters: Dict = None, agent_variant: Optional[str] = None):
    """
    Decorator that registers an allocation policy with metadata.

    Parameter Specification Format:
        {
            'parameter_name': {
                'type': 'int' | 'float' | 'bool',
                'min': minimum_value,
                'max': maximum_value,
                'default': default_value,
                'display_name': 'Label',
            }
        }
    """
    def decorator(func: Callable):
        metadata = PolicyMetadata(
            name=name,
            display_name=display_name,
            description=description,
            kind=kind,
            parameters=parameters or {},
            agent_variant=agent_variant,
        )
        func.__policy_metadata__ = metadata
        POLICY_REGISTRY[name] = {'function': func, 'metadata': metadata}
        return func

    return decorator


def get_policy(name: str) -> Dict[str, Any]:
    """
    Look up a registered policy.

    Raises:
        PolicyNotFoundError: If ``name`` is not registered
    """
    if name not in POLICY_REGISTRY:
        raise PolicyNotFoundError(f"Unknown policy '{name}'. Available: {', '.join(POLICY_REGISTRY)}")
    return POLICY_REGISTRY[name]


def get_all_policies() -> Dict[str, Dict[str, Any]]:
    return dict(POLICY_REGISTRY)


def list_policy_names(kind: Optional[str] = None) -> List[str]:
    return [n for n, p in POLICY_REGISTRY.items() if kind is None or p['metadata'].kind == kind]


def validate_policy_params(name: str, params: Dict[str, Any]) -> Dict[str, Any]:
    """
    Fill defaults and range-check parameters against the policy's specs.

    Raises:
        ConfigError: On unknown parameters or out-of-range values
    """
    specs = get_policy(name)['metadata'].parameters
    unknown = set(params) - set(specs)
    if unknown:
        raise ConfigError(f"policy '{name}' has no parameters {sorted(unknown)}")
    values = {}
    for key, spec in specs.items():
        value = params.get(key, spec.get('default'))
        if value is None:
            continue
        if 'min' in spec and value < spec['min'] or 'max' in spec and value > spec['max']:
            raise ConfigError(f"{name}.{key}={value} outside [{spec.get('min')}, {spec.get('max')}]")
        values[key] = value
    return values


@dataclass
class BaselineConfig:
    """Baseline selection: variant tag, CGQ sensing proportion and fixed step."""
    variant: str = 'cgq_fsg'
    alpha: float = 0.2
    z_fixed: Optional[int] = None
    assume_perfect_accuracy: bool = True

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")

    def validate_for(self, system: SystemConfig) -> None:
        if self.z_fixed is not None and not system.z_min <= self.z_fixed <= system.z_max:
            raise ConfigError(f"z_fixed {self.z_fixed} outside [{system.z_min}, {system.z_max}]")


def midpoint_step(system: SystemConfig) -> int:
    """floor((z_min + z_max) / 2)."""
    return (system.z_min + system.z_max) // 2


def _require_agent(agent, variant: str):
    if agent is None:
        raise ValueError(f"policy needs a trained '{variant}' agent")
    if agent.config.variant != variant:
        raise ValueError(f"expected a '{variant}' agent, got '{agent.config.variant}'")


# ============================================
# HEURISTIC BASELINES
# ============================================

@policy(
    name='cgq_fsg',
    display_name='CGQ-FSG',
    description='Sensing energy fixed to a proportion alpha of the per-user budget, generating step fixed to '
                'the midpoint, communication by RCE oriented to content quality only.',
    parameters={
        'alpha': {'type': 'float', 'min': 0.01, 'max': 0.99, 'default': 0.2, 'display_name': 'Sensing proportion'},
        'assume_perfect_accuracy': {'type': 'bool', 'default': True, 'display_name': 'Rank with Theta = 1'},
    },
)
def cgq_fsg(scenario: Scenario, system: SystemConfig, alpha: float = 0.2,
            assume_perfect_accuracy: bool = True, **_) -> AllocationResult:
    """
    E_s = min(alpha E_max / K, E_s_max), z = floor((z_min + z_max) / 2), RCE on the residual.

    Deterministic given (scenario, alpha).
    """
    if not 0 < alpha < 1:
        raise ConfigError(f"alpha must lie in (0, 1), got {alpha}")
    k = scenario.num_users
    e_s = np.full(k, min(alpha * system.e_max / k, system.e_s_max))
    z = np.full(k, midpoint_step(system), dtype=np.int64)
    engine = AllocationEngine(system, assume_perfect_accuracy=assume_perfect_accuracy)
    return engine.run(scenario, z, d=None, e_s=e_s)


@policy(
    name='fixed_step_oracle',
    display_name='Fixed-step oracle',
    description='Fixed generating step with the best common sensing output found by grid search '
                '(filtered mapping), communication by RCE.',
    kind='oracle',
    parameters={
        'z_fixed': {'type': 'int', 'min': 1, 'max': 1000, 'default': None, 'display_name': 'Generating step'},
        'grid': {'type': 'int', 'min': 2, 'max': 1001, 'default': 21, 'display_name': 'Sensing grid points'},
    },
)
def fixed_step_oracle(scenario: Scenario, system: SystemConfig, z_fixed: Optional[int] = None,
                      grid: int = 21, filter_mode: str = 'filtered', **_) -> AllocationResult:
    """
    Best AvgCAQA over a common d in linspace(0, 1, grid) at a fixed step.

    Ties keep the smallest d.
    """
    z_fixed = midpoint_step(system) if z_fixed is None else int(z_fixed)
    if not system.z_min <= z_fixed <= system.z_max:
        raise ConfigError(f"z_fixed {z_fixed} outside [{system.z_min}, {system.z_max}]")
    k = scenario.num_users
    z = np.full(k, z_fixed, dtype=np.int64)
    engine = AllocationEngine(system, filter_mode=filter_mode)

    best = None
    for d in np.linspace(0.0, 1.0, grid):
        result = engine.run(scenario, z, np.full(k, d))
        if best is None or result.outcome.avg_caqa > best.outcome.avg_caqa:
            best = result
    return best


# ============================================
# LEARNED POLICIES
# ============================================

@policy(
    name='lpdrl_f',
    display_name='LPDRL-F',
    description='SAC over generating steps and filtered sensing, RCE for communication.',
    kind='learned',
    agent_variant='lpdrl_f',
)
def lpdrl_f(scenario: Scenario, system: SystemConfig, agent=None, **_) -> AllocationResult:
    _require_agent(agent, 'lpdrl_f')
    return agent.decide(scenario)


@policy(
    name='lpdrl',
    display_name='LPDRL',
    description='LPDRL-F without the action filter: E_s = d E_s_max.',
    kind='learned',
    agent_variant='lpdrl',
)
def lpdrl_variant(scenario: Scenario, system: SystemConfig, agent=None, **_) -> AllocationResult:
    _require_agent(agent, 'lpdrl')
    return agent.decide(scenario)


@policy(
    name='saqa_fg',
    display_name='SAQA-FG',
    description='Fixed generating step; sensing by SAC with a filter that ignores the generation error; '
                'RCE for communication. Scored with the true generation error.',
    kind='learned',
    parameters={'z_fixed': {'type': 'int', 'min': 1, 'max': 1000, 'default': None, 'display_name': 'Generating step'}},
    agent_variant='saqa_fg',
)
def saqa_fg(scenario: Scenario, system: SystemConfig, agent=None, z_fixed: Optional[int] = None,
            **_) -> AllocationResult:
    _require_agent(agent, 'saqa_fg')
    if z_fixed is not None and agent.config.fixed_step != z_fixed:
        raise ValueError(f"agent was trained for step {agent.config.fixed_step}, not {z_fixed}")
    return agent.decide(scenario)


@policy(
    name='jdrl_f',
    display_name='JDRL-F',
    description='SAC over steps, filtered sensing and communication fractions of the residual budget (no RCE).',
    kind='learned',
    agent_variant='jdrl_f',
)
def jdrl_f(scenario: Scenario, system: SystemConfig, agent=None, **_) -> AllocationResult:
    _require_agent(agent, 'jdrl_f')
    return agent.decide(scenario)


# ============================================
# EVALUATION OVER A SCENARIO SET
# ============================================

@dataclass
class PolicyEvaluation:
    """
    One policy scored on a list of scenarios.

    Attributes:
        policy: Registered policy name
        params: Parameters the policy ran with
        records: One row per scenario (AvgCAQA, reward, Theta, quality, violations)
        user_caqa: Every user's CAQA, concatenated over scenarios
    """
    policy: str
    params: Dict[str, Any]
    records: pd.DataFrame
    user_caqa: np.ndarray

    @property
    def summary(self) -> Dict[str, float]:
        r = self.records
        users = float(r['num_users'].sum())
        return {
            'mean_avg_caqa': float(r['avg_caqa'].mean()),
            'std_avg_caqa': float(r['avg_caqa'].std(ddof=0)),
            'mean_reward': float(r['reward'].mean()),
            'mean_theta': float(r['mean_theta'].mean()),
            'mean_quality': float(r['mean_quality'].mean()),
            'violation_rate': float(r['violators'].sum() / users) if users else 0.0,
            'user_caqa_p10': float(np.percentile(self.user_caqa, 10)),
            'user_caqa_p50': float(np.percentile(self.user_caqa, 50)),
            'user_caqa_p90': float(np.percentile(self.user_caqa, 90)),
            'scenarios': int(len(r)),
        }


def evaluate_policy(name: str, scenarios: List[Scenario], system: SystemConfig, agent=None,
                    **params) -> PolicyEvaluation:
    """
    Run a registered policy on every scenario and collect per-scenario metrics.

    Raises:
        PolicyNotFoundError: If ``name`` is not registered
        ConfigError: If ``params`` do not match the policy's specs
    """
    entry = get_policy(name)
    values = validate_policy_params(name, params)
    func = entry['function']

    rows = []
    user_caqa = []
    for index, scenario in enumerate(scenarios):
        result = func(scenario, system, agent=agent, **values)
        row = {'scenario': index, 'num_users': scenario.num_users}
        row.update(result.metrics)
        rows.append(row)
        user_caqa.append(result.outcome.omega)

    logger.debug("Evaluated %s on %d scenarios", name, len(scenarios))
    return PolicyEvaluation(
        policy=name,
        params=values,
        records=pd.DataFrame(rows),
        user_caqa=np.concatenate(user_caqa) if user_caqa else np.zeros(0),
    )
