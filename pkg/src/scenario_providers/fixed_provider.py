"""
Fixed Scenario Provider - Single Repeated Scenario

Returns the same scenario every iteration. Used as the toy environment for
training smoke checks, where any learning gain must come from the policy
and not from a lucky draw.
"""

from typing import Any, Dict, Optional

import numpy as np

from ..config import SystemConfig
from .base_provider import BaseScenarioProvider, Scenario
from .random_provider import draw_scenario


class FixedScenarioProvider(BaseScenarioProvider):
    """
    One scenario, drawn once from its own seed (or supplied directly).

    Config options:
        - seed: Seed of the single draw (default: 0)
        - scenario: A ready-made Scenario to repeat instead of drawing one
    """

    def __init__(self, system: SystemConfig, config: Optional[Dict[str, Any]] = None):
        super().__init__(system, config)
        scenario = self.config.get('scenario')
        if scenario is None:
            scenario = draw_scenario(system, np.random.default_rng(self.config.get('seed', 0)))
        self.scenario: Scenario = scenario

    def reset_episode(self, rng: np.random.Generator) -> None:
        pass

    def next_scenario(self, rng: np.random.Generator) -> Scenario:
        return self.scenario

    def get_provider_info(self) -> Dict[str, Any]:
        info = super().get_provider_info()
        info.update({'type': 'fixed', 'stochastic': False})
        return info
