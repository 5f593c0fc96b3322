"""
Random Scenario Provider - Cell Geometry and Channel Draws

Users are placed uniformly over the coverage disk, channels follow the
128.1 + 37.6 log10(d[km]) path loss with an exponential (Rayleigh power)
fade, minimum CAQA requirements are uniform over ``omega_min_range`` and
the priority order is a uniform random permutation.
"""

from typing import Any, Dict, Optional

import numpy as np

from ..config import SystemConfig, path_loss_db
from .base_provider import BaseScenarioProvider, Scenario, ScenarioError, UserScenario


def draw_positions(config: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """
    Area-uniform user distances over the coverage disk, r = R sqrt(u).

    u is drawn from (0, 1] so no user sits exactly on the device.

    Args:
        config: System constants (coverage_radius_m, num_users)
        rng: Random stream

    Returns:
        Array of K distances in metres
    """
    u = 1.0 - rng.random(config.num_users)
    return distances_from_uniform(u, config.coverage_radius_m)


def distances_from_uniform(u, radius: float) -> np.ndarray:
    """Inverse-CDF map of uniform samples to disk radii."""
    return radius * np.sqrt(np.asarray(u, dtype=np.float64))


def path_loss_gain(distance) -> np.ndarray:
    """Linear gain 10^(-PL(d)/10) without fading."""
    distance = np.asarray(distance, dtype=np.float64)
    if np.any(distance <= 0):
        raise ScenarioError("distance must be strictly positive")
    pl = np.vectorize(path_loss_db, otypes=[np.float64])(distance)
    return 10.0 ** (-pl / 10.0)


def draw_fades(size: int, rng: np.random.Generator, floor: float = 1e-6) -> np.ndarray:
    """Exp(1) Rayleigh power fades, redrawing any value below ``floor``."""
    fades = rng.exponential(1.0, size)
    low = fades < floor
    while np.any(low):
        fades[low] = rng.exponential(1.0, int(low.sum()))
        low = fades < floor
    return fades


def channel_gain(distance, rng: Optional[np.random.Generator] = None,
                 config: Optional[SystemConfig] = None, fade=None) -> np.ndarray:
    """
    Power gain g = 10^(-PL(d)/10) * F.

    Args:
        distance: Distance(s) in metres, strictly positive
        rng: Random stream for the fade (unused when ``fade`` is given)
        config: System constants (for the fade floor)
        fade: Explicit fade value(s); drawn from Exp(1) when None

    Returns:
        Gain(s), same shape as ``distance``

    Raises:
        ScenarioError: If a distance is non-positive or an explicit fade is not positive
    """
    base = path_loss_gain(distance)
    if fade is None:
        if rng is None:
            raise ScenarioError("rng is required when no explicit fade is given")
        floor = config.fade_floor if config is not None else 1e-6
        fade = draw_fades(base.size, rng, floor).reshape(base.shape)
    fade = np.asarray(fade, dtype=np.float64)
    if np.any(fade <= 0):
        raise ScenarioError("fade must be strictly positive (zero gain is not representable)")
    return base * fade


def normalized_log_gain(gain_g, config: SystemConfig) -> np.ndarray:
    """
    h = log10(g / L_n).

    Raises:
        ScenarioError: If any gain is non-positive
    """
    gain_g = np.asarray(gain_g, dtype=np.float64)
    if np.any(gain_g <= 0):
        raise ScenarioError("gain must be strictly positive")
    return np.log10(gain_g / config.normalization_gain)


def draw_scenario(config: SystemConfig, rng: np.random.Generator,
                  distances: Optional[np.ndarray] = None) -> Scenario:
    """
    Draw one time slot: fades, requirements and priority order.

    Args:
        config: System constants
        rng: Random stream
        distances: Fixed user distances for this episode (drawn when None)

    Returns:
        Scenario sorted by priority rank; ``scenario.state`` is the
        interleaved [h, Omega_min] agent state
    """
    k = config.num_users
    if distances is None:
        distances = draw_positions(config, rng)
    distances = np.asarray(distances, dtype=np.float64)
    if distances.shape != (k,):
        raise ScenarioError(f"expected {k} distances, got shape {distances.shape}")

    gains = channel_gain(distances, rng, config)
    low, high = config.omega_min_range
    omega_min = rng.uniform(low, high, k)
    ranks = rng.permutation(k) + 1
    log_gains = normalized_log_gain(gains, config)

    users = [
        UserScenario(
            user_id=i,
            distance_m=float(distances[i]),
            gain_g=float(gains[i]),
            log_gain_h=float(log_gains[i]),
            omega_min=float(omega_min[i]),
            priority_rank=int(ranks[i]),
        )
        for i in range(k)
    ]
    users.sort(key=lambda u: u.priority_rank)
    return Scenario(users=tuple(users))


class RandomScenarioProvider(BaseScenarioProvider):
    """
    Randomized cell: positions per episode, everything else per iteration.

    Deterministic given the caller's Generator.
    """

    def __init__(self, system: SystemConfig, config: Optional[Dict[str, Any]] = None):
        super().__init__(system, config)
        self._distances: Optional[np.ndarray] = None

    def reset_episode(self, rng: np.random.Generator) -> None:
        self._distances = draw_positions(self.system, rng)

    def next_scenario(self, rng: np.random.Generator) -> Scenario:
        if self._distances is None:
            self.reset_episode(rng)
        return draw_scenario(self.system, rng, self._distances)

    def get_provider_info(self) -> Dict[str, Any]:
        info = super().get_provider_info()
        info['type'] = 'random'
        return info
