"""
Scenario Providers Package

Sources of per-slot user scenarios (channel gains, minimum CAQA
requirements, priority order) for training, evaluation and sweeps.

Main Components:
- BaseScenarioProvider: Abstract interface all sources implement
- ScenarioManager: Provider registry with cached instances
- Concrete Providers: RandomScenarioProvider, FixedScenarioProvider, CSVScenarioProvider

Usage:
    from src.scenario_providers import draw_scenario
    scenario = draw_scenario(SystemConfig(), np.random.default_rng(0))
    scenario.state  # [h_1, Omega_1,min, ..., h_K, Omega_K,min]
"""

from .base_provider import (
    BaseScenarioProvider,
    Scenario,
    ScenarioError,
    ScenarioNotFoundError,
    UserScenario,
)
from .random_provider import (
    RandomScenarioProvider,
    channel_gain,
    distances_from_uniform,
    draw_positions,
    draw_scenario,
    normalized_log_gain,
    path_loss_gain,
)
from .fixed_provider import FixedScenarioProvider
from .csv_provider import CSVScenarioProvider, load_scenarios, save_scenarios
from .scenario_manager import ScenarioManager, draw_test_set

__all__ = [
    # Records and errors
    'UserScenario',
    'Scenario',
    'ScenarioError',
    'ScenarioNotFoundError',

    # Draws
    'draw_positions',
    'distances_from_uniform',
    'path_loss_gain',
    'channel_gain',
    'normalized_log_gain',
    'draw_scenario',

    # Providers
    'BaseScenarioProvider',
    'RandomScenarioProvider',
    'FixedScenarioProvider',
    'CSVScenarioProvider',
    'load_scenarios',
    'save_scenarios',

    # Manager
    'ScenarioManager',
    'draw_test_set',
]
