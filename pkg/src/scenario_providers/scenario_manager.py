"""
Scenario Manager - Unified Interface for Scenario Sources

Keeps a registry of provider classes and hands out cached instances, so
the harness can select a source by name ('random', 'fixed', 'csv').
"""

from typing import Any, Dict, List, Optional, Type

import numpy as np

from ..config import SystemConfig
from .base_provider import BaseScenarioProvider, Scenario, ScenarioNotFoundError
from .csv_provider import CSVScenarioProvider
from .fixed_provider import FixedScenarioProvider
from .random_provider import RandomScenarioProvider


class ScenarioManager:
    """
    Central access point for scenario providers.

    Features:
    - Provider lookup by name
    - Per-name instance caching
    - Registration of custom providers
    """

    PROVIDERS: Dict[str, Type[BaseScenarioProvider]] = {
        'random': RandomScenarioProvider,
        'fixed': FixedScenarioProvider,
        'csv': CSVScenarioProvider,
    }

    def __init__(self, system: SystemConfig, default_provider: str = 'random',
                 provider_configs: Optional[Dict[str, Dict]] = None):
        """
        Initialize Scenario Manager.

        Args:
            system: System constants shared by every provider
            default_provider: Provider used when none is named
            provider_configs: Dict of provider-specific configurations
                Example: {'csv': {'path': 'runs/test_set.csv'}, 'fixed': {'seed': 3}}
        """
        self.system = system
        self.default_provider = default_provider
        self.provider_configs = provider_configs or {}
        self._provider_instances: Dict[str, BaseScenarioProvider] = {}

    def get_provider(self, provider_name: Optional[str] = None) -> BaseScenarioProvider:
        """
        Get or create a provider instance.

        Raises:
            ScenarioNotFoundError: If the provider name is unknown
        """
        provider_name = provider_name or self.default_provider
        if provider_name not in self.PROVIDERS:
            available = ', '.join(self.PROVIDERS.keys())
            raise ScenarioNotFoundError(
                f"Unknown provider '{provider_name}'. Available providers: {available}"
            )

        if provider_name not in self._provider_instances:
            provider_class = self.PROVIDERS[provider_name]
            config = self.provider_configs.get(provider_name, {})
            self._provider_instances[provider_name] = provider_class(self.system, config)
        return self._provider_instances[provider_name]

    def register_provider(self, name: str, provider_class: Type[BaseScenarioProvider]):
        """Register a custom scenario provider under ``name``."""
        if not issubclass(provider_class, BaseScenarioProvider):
            raise TypeError("Provider class must inherit from BaseScenarioProvider")
        self.PROVIDERS = {**self.PROVIDERS, name: provider_class}

    def get_available_providers(self) -> List[str]:
        return list(self.PROVIDERS.keys())


def draw_test_set(system: SystemConfig, episodes: int, iterations: int, seed: int) -> List[Scenario]:
    """
    Draw a flat list of episodes x iterations random scenarios.

    Example:
        >>> scenarios = draw_test_set(SystemConfig(), episodes=100, iterations=10, seed=7)
    """
    rng = np.random.default_rng(seed)
    provider = RandomScenarioProvider(system)
    scenarios: List[Scenario] = []
    for _ in range(episodes):
        scenarios.extend(provider.episode(iterations, rng))
    return scenarios
