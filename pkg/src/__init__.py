"""
ISAC-AIGC Resource Allocation Suite

Simulator and solvers for accuracy- and quality-aware AI-generated content
services driven by integrated sensing and communication: the analytic
service model, the ranking-based communication energy allocator (RCE),
the hybrid-action SAC learner and its baselines, and the experiment harness.
"""

__version__ = '1.0.0'

from .config import ConfigError, SystemConfig, load_config
from .service_model import Allocation, ServiceOutcome, evaluate
from .comra_rce import ComraInstance, build_instance, rce_allocate
from .allocation_engine import AllocationEngine, action_filter, lp_guided_reward
from .sac_agent import AgentConfig, SACAgent, agent_config_for
from .baselines import evaluate_policy, get_all_policies, get_policy, list_policy_names

__all__ = [
    'ConfigError',
    'SystemConfig',
    'load_config',
    'Allocation',
    'ServiceOutcome',
    'evaluate',
    'ComraInstance',
    'build_instance',
    'rce_allocate',
    'AllocationEngine',
    'action_filter',
    'lp_guided_reward',
    'AgentConfig',
    'SACAgent',
    'agent_config_for',
    'evaluate_policy',
    'get_all_policies',
    'get_policy',
    'list_policy_names',
]
