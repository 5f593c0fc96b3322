"""
Base Scenario Provider - Abstract Interface

Defines the per-user scenario records and the interface every scenario
source (random draws, a fixed toy scenario, CSV replay) must implement, so
training, evaluation and sweeps can switch sources without code changes.
"""

from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from ..config import SystemConfig


class ScenarioError(ValueError):
    """Raised when a scenario value is outside its physical domain."""
    pass


class ScenarioNotFoundError(Exception):
    """Raised when a requested scenario source (file, set) is not available."""
    pass


@dataclass(frozen=True)
class UserScenario:
    """
    Channel and requirement state of one user in one time slot.

    Attributes:
        user_id: Index of the user before re-ordering by priority
        distance_m: Distance to the ISAC device (m)
        gain_g: Linear power gain (path loss x Rayleigh fade)
        log_gain_h: Normalized logarithmic gain log10(g / L_n)
        omega_min: Minimum CAQA requirement
        priority_rank: 1..K, 1 is sensed first
    """
    user_id: int
    distance_m: float
    gain_g: float
    log_gain_h: float
    omega_min: float
    priority_rank: int


@dataclass(frozen=True)
class Scenario:
    """K users sorted by priority rank (index order == sensing order)."""
    users: tuple

    def __post_init__(self):
        ranks = sorted(u.priority_rank for u in self.users)
        if ranks != list(range(1, len(self.users) + 1)):
            raise ScenarioError(f"priority ranks must be a permutation of 1..K, got {ranks}")
        if any(u.gain_g <= 0 for u in self.users):
            raise ScenarioError("channel gains must be strictly positive")
        if [u.priority_rank for u in self.users] != ranks:
            object.__setattr__(self, 'users', tuple(sorted(self.users, key=lambda u: u.priority_rank)))

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def gains(self) -> np.ndarray:
        return np.array([u.gain_g for u in self.users], dtype=np.float64)

    @property
    def log_gains(self) -> np.ndarray:
        return np.array([u.log_gain_h for u in self.users], dtype=np.float64)

    @property
    def omega_min(self) -> np.ndarray:
        return np.array([u.omega_min for u in self.users], dtype=np.float64)

    @property
    def distances(self) -> np.ndarray:
        return np.array([u.distance_m for u in self.users], dtype=np.float64)

    @property
    def state(self) -> np.ndarray:
        """Agent state [h_1, Omega_1,min, ..., h_K, Omega_K,min] (length 2K)."""
        state = np.empty(2 * self.num_users, dtype=np.float64)
        state[0::2] = self.log_gains
        state[1::2] = self.omega_min
        return state

    def to_frame(self) -> pd.DataFrame:
        """One row per user, in priority order."""
        return pd.DataFrame([asdict(u) for u in self.users])


class BaseScenarioProvider(ABC):
    """
    Abstract base class for scenario sources.

    Episodes follow the simulation protocol: user positions are reset at the
    start of each episode, while priorities, requirements and fades change
    every iteration (time slot).
    """

    def __init__(self, system: SystemConfig, config: Optional[Dict[str, Any]] = None):
        """
        Initialize the provider.

        Args:
            system: System constants (K, radius, requirement range, ...)
            config: Optional provider-specific options
        """
        self.system = system
        self.config = config or {}

    @abstractmethod
    def reset_episode(self, rng: np.random.Generator) -> None:
        """Start a new episode (re-draw whatever is fixed within an episode)."""
        pass

    @abstractmethod
    def next_scenario(self, rng: np.random.Generator) -> Scenario:
        """
        Produce the scenario of the next iteration.

        Args:
            rng: Random stream owned by the caller

        Returns:
            Scenario with K users sorted by priority
        """
        pass

    def episode(self, iterations: int, rng: np.random.Generator) -> List[Scenario]:
        """Reset and draw one episode of ``iterations`` scenarios."""
        self.reset_episode(rng)
        return [self.next_scenario(rng) for _ in range(iterations)]

    def get_provider_info(self) -> Dict[str, Any]:
        """
        Get information about this provider.

        Returns:
            Dict with name, type, num_users and whether draws are random
        """
        return {
            'name': self.__class__.__name__,
            'type': 'unknown',
            'num_users': self.system.num_users,
            'stochastic': True,
        }
