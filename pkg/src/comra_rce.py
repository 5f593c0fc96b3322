"""
Communication Energy Allocation - Ranking-Based Greedy (RCE)

Once sensing energies and generating steps are fixed, CAQA is linear in
each user's communication energy between a per-user floor (the energy that
just meets the minimum CAQA) and a ceiling (service-time or display limit).
Maximizing AvgCAQA under the shared residual budget is then a box-bounded
knapsack LP, solved exactly by funding floors and pouring the remainder in
descending order of CAQA-per-joule.

Usage:
    instance = build_instance(scenario, e_s, z, config)
    e_c = rce_allocate(instance)
    assert greedy_exchange_check(instance, e_c)
"""

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .scenario_providers import Scenario
from .service_model import Timeline, content_accuracy, display_energy, timeline

EXCHANGE_DELTA = 1e-6


@dataclass
class ComraInstance:
    """
    One communication sub-problem.

    Attributes:
        theta: Content accuracy per user (fixed by E_s and z)
        gain: Channel power gain per user
        omega_min: Minimum CAQA per user
        e_min: Energy that just meets omega_min (inf when unreachable)
        e_max_comm: Largest useful energy (time or display bound)
        lam: CAQA gained per joule below the display cap
        e_r: Residual budget E_max - sum(E_s), may be <= 0
    """
    theta: np.ndarray
    gain: np.ndarray
    omega_min: np.ndarray
    e_min: np.ndarray
    e_max_comm: np.ndarray
    lam: np.ndarray
    e_r: float

    @property
    def num_users(self) -> int:
        return int(self.theta.size)

    @property
    def eligible(self) -> np.ndarray:
        """Users whose floor is finite and fits under their ceiling."""
        return np.isfinite(self.e_min) & (self.e_max_comm >= self.e_min)


def min_comm_energy(theta, gain_g, omega_min, config: SystemConfig) -> np.ndarray:
    """
    E_min = Omega_min P_c beta D_c / (Theta C).

    Users with Theta = 0 or Omega_min > Theta cannot meet their requirement
    at any resolution; their E_min is +inf (ineligible).
    """
    theta = np.asarray(theta, dtype=np.float64)
    omega_min = np.asarray(omega_min, dtype=np.float64)
    reachable = (theta > 0) & (omega_min <= theta)
    ratio = np.where(reachable, omega_min / np.where(theta > 0, theta, 1.0), np.inf)
    return ratio * display_energy(gain_g, config)


def max_comm_energy(times: Timeline, gain_g, config: SystemConfig) -> np.ndarray:
    """
    Smaller of the service-time and display bounds, floored at 0.

    P_c (T_max - T_arr - T_que - T_gen - T_wait) vs. P_c beta D_c / C.
    """
    time_bound = config.p_c * (config.t_max - times.comm_start)
    return np.maximum(np.minimum(time_bound, display_energy(gain_g, config)), 0.0)


def priority_metric(theta, gain_g, config: SystemConfig) -> np.ndarray:
    """Lambda = Theta C / (beta P_c D_c), the dOmega/dE_c below the display cap."""
    return np.asarray(theta, dtype=np.float64) / display_energy(gain_g, config)


def build_instance(scenario: Scenario, e_s, z, config: SystemConfig,
                   assume_perfect_accuracy: bool = False) -> ComraInstance:
    """
    Assemble the communication sub-problem for fixed (E_s, z).

    Args:
        scenario: Users in priority order
        e_s: Sensing energies
        z: Generating steps
        config: System constants
        assume_perfect_accuracy: Use Theta = 1 for floors and ranking
            (content-quality-only policies)

    Returns:
        ComraInstance
    """
    e_s = np.asarray(e_s, dtype=np.float64)
    gains = scenario.gains
    omega_min = scenario.omega_min

    if assume_perfect_accuracy:
        theta = np.ones_like(e_s)
    else:
        theta = content_accuracy(e_s, z, config)

    return ComraInstance(
        theta=theta,
        gain=gains,
        omega_min=omega_min,
        e_min=min_comm_energy(theta, gains, omega_min, config),
        e_max_comm=max_comm_energy(timeline(e_s, z, config), gains, config),
        lam=priority_metric(theta, gains, config),
        e_r=float(config.e_max - e_s.sum()),
    )


def rce_allocate(instance: ComraInstance) -> np.ndarray:
    """
    Ranking-based communication energy allocation.

    1. No budget or no eligible user: all zeros.
    2. Rank eligible users by descending Lambda (stable on index).
    3. Budget below the sum of floors: fund floors in rank order, stop at
       the first user that no longer fits.
    4. Otherwise fund every floor and pour the remainder in rank order up
       to each ceiling.

    Returns:
        E_c per user; sum(E_c) <= max(E_r, 0) and funded users lie in [E_min, E_max_comm]
    """
    e_c = np.zeros(instance.num_users, dtype=np.float64)
    e_r = instance.e_r
    eligible = np.flatnonzero(instance.eligible)
    if e_r <= 0 or eligible.size == 0:
        return e_c

    order = eligible[np.argsort(-instance.lam[eligible], kind='stable')]
    floors = instance.e_min[order]

    if e_r <= floors.sum():
        funded = np.cumsum(floors) <= e_r
        e_c[order[funded]] = floors[funded]
        return e_c

    e_c[order] = floors
    residual = e_r - floors.sum()
    headroom = instance.e_max_comm[order] - floors
    before = np.cumsum(headroom) - headroom
    e_c[order] += np.clip(residual - before, 0.0, headroom)
    return e_c


def comra_objective(instance: ComraInstance, e_c) -> float:
    """AvgCAQA of a communication allocation, mean of min(Lambda E_c, Theta)."""
    e_c = np.asarray(e_c, dtype=np.float64)
    return float(np.mean(np.minimum(instance.lam * e_c, instance.theta)))


def greedy_exchange_check(instance: ComraInstance, e_c, delta: float = EXCHANGE_DELTA,
                          check_budget_slack: bool = False) -> bool:
    """
    Local-optimality certificate for a communication allocation.

    True iff no transfer of ``delta`` joules from a funded user (staying at
    or above its floor) to another funded user (staying at or below its
    ceiling) with strictly higher Lambda exists. With
    ``check_budget_slack`` unspent budget that a funded user could absorb
    also fails the check.

    The scan is O(K): the best receiver against the worst donor.
    """
    e_c = np.asarray(e_c, dtype=np.float64)
    funded = e_c > 0
    if np.count_nonzero(funded) == 0:
        return True

    scale = max(float(np.max(instance.lam[funded])), 1e-300)
    tol = 1e-12 * scale
    donors = funded & (e_c - delta >= instance.e_min - 1e-15)
    receivers = funded & (e_c + delta <= instance.e_max_comm + 1e-15)

    if donors.any() and receivers.any():
        if instance.lam[receivers].max() > instance.lam[donors].min() + tol:
            return False

    if check_budget_slack and receivers.any():
        slack = max(instance.e_r, 0.0) - e_c.sum()
        if slack >= delta and instance.lam[receivers].max() > tol:
            return False

    return True
