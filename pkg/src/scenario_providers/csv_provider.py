"""
CSV Scenario Provider - Replay Recorded Scenario Sets

Lets every policy be evaluated on the very same test scenarios: a set is
drawn once, written with ``save_scenarios`` and replayed in order.

File layout (one row per user):
    scenario_id, user_id, distance_m, gain_g, omega_min, priority_rank
"""

from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from ..config import SystemConfig
from .base_provider import BaseScenarioProvider, Scenario, ScenarioError, ScenarioNotFoundError, UserScenario
from .random_provider import normalized_log_gain

REQUIRED_COLUMNS = ['scenario_id', 'user_id', 'distance_m', 'gain_g', 'omega_min', 'priority_rank']


def save_scenarios(scenarios: Iterable[Scenario], path) -> Path:
    """
    Write scenarios to a CSV file.

    Args:
        scenarios: Scenarios to store
        path: Target file

    Returns:
        Path written
    """
    frames = []
    for i, scenario in enumerate(scenarios):
        frame = scenario.to_frame()
        frame.insert(0, 'scenario_id', i)
        frames.append(frame)
    if not frames:
        raise ScenarioError("no scenarios to save")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.concat(frames, ignore_index=True)[REQUIRED_COLUMNS].to_csv(path, index=False, float_format='%.17g')
    return path


def load_scenarios(path, system: SystemConfig) -> List[Scenario]:
    """
    Read scenarios written by ``save_scenarios``.

    The log gain is recomputed with the system's L_n so a file can be
    replayed under a different normalization.

    Raises:
        ScenarioNotFoundError: If the file does not exist
        ScenarioError: If columns are missing or a scenario has the wrong K
    """
    path = Path(path)
    if not path.exists():
        raise ScenarioNotFoundError(f"Scenario file not found: {path}")

    df = pd.read_csv(path)
    missing = [c for c in REQUIRED_COLUMNS if c not in df.columns]
    if missing:
        raise ScenarioError(f"Missing required columns: {missing}")

    scenarios = []
    for _, group in df.groupby('scenario_id', sort=True):
        if len(group) != system.num_users:
            raise ScenarioError(f"scenario has {len(group)} users, config expects {system.num_users}")
        log_gains = normalized_log_gain(group['gain_g'].to_numpy(), system)
        users = [
            UserScenario(
                user_id=int(row.user_id),
                distance_m=float(row.distance_m),
                gain_g=float(row.gain_g),
                log_gain_h=float(h),
                omega_min=float(row.omega_min),
                priority_rank=int(row.priority_rank),
            )
            for row, h in zip(group.itertuples(index=False), log_gains)
        ]
        scenarios.append(Scenario(users=tuple(users)))
    return scenarios


class CSVScenarioProvider(BaseScenarioProvider):
    """
    Replays scenarios from a CSV file, cycling when exhausted.

    Config options:
        - path: CSV file written by ``save_scenarios`` (required)
    """

    def __init__(self, system: SystemConfig, config: Optional[Dict[str, Any]] = None):
        super().__init__(system, config)
        if 'path' not in self.config:
            raise ScenarioError("CSVScenarioProvider requires config['path']")
        self.scenarios = load_scenarios(self.config['path'], system)
        self._cursor = 0

    def reset_episode(self, rng: np.random.Generator) -> None:
        pass

    def next_scenario(self, rng: np.random.Generator) -> Scenario:
        scenario = self.scenarios[self._cursor % len(self.scenarios)]
        self._cursor += 1
        return scenario

    def get_provider_info(self) -> Dict[str, Any]:
        info = super().get_provider_info()
        info.update({'type': 'file', 'stochastic': False, 'num_scenarios': len(self.scenarios)})
        return info
