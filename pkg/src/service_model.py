# src/service_model.py
"""
Analytic ISAC-AIGC service pipeline.

sense (ISAC device) -> FCFS generation queue (server) -> wait for the last
sensing slot -> concurrent transmission on B/K subchannels -> display.

All functions are vectorized over users and pure.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np
import pandas as pd

from .config import SystemConfig
from .scenario_providers import Scenario

# Flag tolerances
ENERGY_TOL = 1e-12
TIME_TOL = 1e-12
CAQA_TOL = 1e-9
DISPLAY_RTOL = 1e-9

LN2 = math.log(2.0)


class InvalidAllocationError(ValueError):
    """Raised when an allocation is malformed (negative entries, wrong length)."""
    pass


class InfeasibleTargetError(ValueError):
    """Raised when a target accuracy cannot be reached with finite sensing."""
    pass


# ============================================
# ALLOCATION
# ============================================

@dataclass
class Allocation:
    """Per-user sensing energy (J), generating steps and communication energy (J)."""
    e_s: np.ndarray
    z: np.ndarray
    e_c: np.ndarray

    def __post_init__(self):
        self.e_s = np.atleast_1d(np.asarray(self.e_s, dtype=np.float64))
        self.e_c = np.atleast_1d(np.asarray(self.e_c, dtype=np.float64))
        z = np.atleast_1d(np.asarray(self.z))
        if not np.all(np.isfinite(z)) or np.any(z != np.round(z)):
            raise InvalidAllocationError(f"generating steps must be integers, got {z}")
        self.z = z.astype(np.int64)

        if not (self.e_s.shape == self.z.shape == self.e_c.shape) or self.e_s.ndim != 1:
            raise InvalidAllocationError(
                f"length mismatch: e_s {self.e_s.shape}, z {self.z.shape}, e_c {self.e_c.shape}"
            )
        for name, values in (('e_s', self.e_s), ('z', self.z), ('e_c', self.e_c)):
            if not np.all(np.isfinite(values)) or np.any(values < 0):
                raise InvalidAllocationError(f"{name} entries must be finite and non-negative")

    @property
    def num_users(self) -> int:
        return int(self.e_s.size)

    @property
    def total_energy(self) -> float:
        return float(self.e_s.sum() + self.e_c.sum())

    @classmethod
    def zeros(cls, num_users: int) -> 'Allocation':
        return cls(np.zeros(num_users), np.zeros(num_users, dtype=np.int64), np.zeros(num_users))


# ============================================
# SENSING
# ============================================

def sensing_cycles(e_s, config: SystemConfig):
    """n_k = E_s / (T_s P_s), kept continuous."""
    return np.asarray(e_s, dtype=np.float64) / (config.t_s * config.p_s)


def sensing_accuracy(n, config: SystemConfig):
    """
    Upsilon = xi - varpi n^-tau, clamped at 0; defined as 0 for n = 0.
    """
    n = np.asarray(n, dtype=np.float64)
    positive = n > 0
    safe_n = np.where(positive, n, 1.0)
    value = config.xi - config.varpi * safe_n ** (-config.tau)
    return np.where(positive, np.maximum(value, 0.0), 0.0)


def inverse_sensing_accuracy(target_a, config: SystemConfig):
    """
    Sensing cycles that reach a target accuracy, n = (varpi / (xi - a))^(1/tau).

    Args:
        target_a: Target accuracy (scalar or array)
        config: System constants

    Returns:
        n, with n = 0 where target_a <= 0

    Raises:
        InfeasibleTargetError: If any target_a >= xi
    """
    target = np.asarray(target_a, dtype=np.float64)
    if np.any(target >= config.xi):
        raise InfeasibleTargetError(
            f"target accuracy {np.max(target):.6g} is not below the ceiling xi={config.xi}"
        )
    positive = target > 0
    gap = np.where(positive, config.xi - target, 1.0)
    return np.where(positive, (config.varpi / gap) ** (1.0 / config.tau), 0.0)


# ============================================
# GENERATION
# ============================================

def aeg(z, config: SystemConfig):
    """
    Average error of generation, eps = eps_fwd exp(-mu (z - z_min)).

    Raises:
        InvalidAllocationError: If any z < z_min
    """
    z = np.asarray(z, dtype=np.float64)
    if np.any(z < config.z_min):
        raise InvalidAllocationError(f"generating steps below z_min={config.z_min}: {z}")
    return config.eps_fwd * np.exp(-config.mu * (z - config.z_min))


def generation_time(z, config: SystemConfig):
    """T_gen = chi z / f."""
    return config.flops_per_step * np.asarray(z, dtype=np.float64) / config.server_capacity


@dataclass
class Timeline:
    """Per-user FCFS timing (s); users in sensing order."""
    t_arr: np.ndarray
    t_que: np.ndarray
    t_gen: np.ndarray
    t_wait: np.ndarray

    @property
    def generation_end(self) -> np.ndarray:
        return self.t_arr + self.t_que + self.t_gen

    @property
    def comm_start(self) -> np.ndarray:
        """Time at which user k starts transmitting."""
        return self.t_arr + self.t_que + self.t_gen + self.t_wait

    @property
    def sensing_end(self) -> float:
        return float(self.t_arr[-1]) if self.t_arr.size else 0.0


def timeline(e_s, z, config: SystemConfig) -> Timeline:
    """
    Arrival, queueing, generation and waiting times.

    Task k arrives at the server when its sensing ends (sensing is
    sequential in priority order). The server is a single FCFS queue, and
    transmission for everybody can only start once the last user is sensed.

    Args:
        e_s: Sensing energies in priority order
        z: Generating steps
        config: System constants

    Returns:
        Timeline with T_que[0] = 0 and T_que, T_wait >= 0
    """
    n = sensing_cycles(np.atleast_1d(e_s), config)
    t_arr = np.cumsum(n * config.t_s)
    t_gen = generation_time(np.atleast_1d(z), config)

    t_que = np.zeros_like(t_arr)
    finish = 0.0
    for k in range(t_arr.size):
        if k > 0:
            t_que[k] = max(finish - t_arr[k], 0.0)
        finish = t_arr[k] + t_que[k] + t_gen[k]

    sensing_end = t_arr[-1] if t_arr.size else 0.0
    t_wait = np.maximum(sensing_end - (t_arr + t_que + t_gen), 0.0)
    return Timeline(t_arr=t_arr, t_que=t_que, t_gen=t_gen, t_wait=t_wait)


# ============================================
# COMMUNICATION
# ============================================

def snr(gain_g, config: SystemConfig):
    """Per-subchannel SNR g P_c K / (delta^2 B)."""
    return np.asarray(gain_g, dtype=np.float64) * config.p_c * config.num_users / (
        config.noise_psd * config.bandwidth_hz
    )


def transmission_rate(gain_g, config: SystemConfig):
    """C = (B/K) log2(1 + SNR) in bit/s."""
    return config.subchannel_bandwidth * np.log1p(snr(gain_g, config)) / LN2


def display_energy(gain_g, config: SystemConfig):
    """Communication energy at which x reaches D_c, P_c beta D_c / C."""
    return config.p_c * config.display_bits / transmission_rate(gain_g, config)


# ============================================
# CAQA
# ============================================

def content_accuracy(e_s, z, config: SystemConfig):
    """
    Theta = (1 - eps(z)) Upsilon(n(E_s)).

    Users with z below z_min get no admissible content and Theta = 0.
    """
    z = np.asarray(z, dtype=np.float64)
    valid = z >= config.z_min
    eps = aeg(np.where(valid, z, config.z_min), config)
    upsilon = sensing_accuracy(sensing_cycles(e_s, config), config)
    return np.where(valid, (1.0 - eps) * upsilon, 0.0)


def caqa(e_s, z, e_c, gain_g, config: SystemConfig) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Content accuracy, resolution and CAQA.

    Theta = (1 - eps(z)) Upsilon; T_c = E_c / P_c; x = C T_c / beta;
    Omega = Theta min(x / D_c, 1).

    Returns:
        (Theta, x, Omega)
    """
    theta = content_accuracy(e_s, z, config)
    t_c = np.asarray(e_c, dtype=np.float64) / config.p_c
    x = transmission_rate(gain_g, config) * t_c / config.bits_per_pixel
    omega = theta * np.minimum(x / config.display_capacity, 1.0)
    return theta, x, omega


@dataclass
class ServiceOutcome:
    """
    Everything the service model reports for one allocation.

    Per-user arrays are in priority order. ``c2`` is a single flag (the
    energy budget is shared); all other constraint flags are per user.
    """
    n_cycles: np.ndarray
    t_arr: np.ndarray
    t_que: np.ndarray
    t_gen: np.ndarray
    t_wait: np.ndarray
    t_c: np.ndarray
    t_total: np.ndarray
    upsilon: np.ndarray
    eps: np.ndarray
    theta: np.ndarray
    rate: np.ndarray
    x_pixels: np.ndarray
    quality: np.ndarray
    omega: np.ndarray
    omega_min: np.ndarray
    c1: np.ndarray
    c2: bool
    c3: np.ndarray
    c4: np.ndarray
    c5: np.ndarray
    c6: np.ndarray
    total_energy: float
    avg_caqa: float = field(init=False)

    def __post_init__(self):
        self.avg_caqa = float(np.mean(self.omega)) if self.omega.size else 0.0

    @property
    def num_users(self) -> int:
        return int(self.omega.size)

    @property
    def num_violators(self) -> int:
        """Users violating the minimum CAQA requirement (C5)."""
        return int(np.sum(~self.c5))

    @property
    def mean_theta(self) -> float:
        return float(np.mean(self.theta))

    @property
    def mean_quality(self) -> float:
        return float(np.mean(self.quality))

    @property
    def feasible(self) -> bool:
        return bool(
            self.c2 and self.c1.all() and self.c3.all() and self.c4.all() and self.c5.all() and self.c6.all()
        )

    def violation_counts(self) -> Dict[str, int]:
        return {
            'c1': int(np.sum(~self.c1)),
            'c2': int(not self.c2),
            'c3': int(np.sum(~self.c3)),
            'c4': int(np.sum(~self.c4)),
            'c5': int(np.sum(~self.c5)),
            'c6': int(np.sum(~self.c6)),
        }

    def to_frame(self) -> pd.DataFrame:
        """Flat per-user record for the harness."""
        columns = [
            'n_cycles', 't_arr', 't_que', 't_gen', 't_wait', 't_c', 't_total', 'upsilon', 'eps',
            'theta', 'rate', 'x_pixels', 'quality', 'omega', 'omega_min', 'c1', 'c3', 'c4', 'c5', 'c6',
        ]
        frame = pd.DataFrame({name: getattr(self, name) for name in columns})
        frame.insert(0, 'user', np.arange(self.num_users))
        return frame


def evaluate(scenario: Scenario, allocation: Allocation, config: SystemConfig) -> ServiceOutcome:
    """
    Evaluate an allocation against the service model and constraints C1-C6.

    Args:
        scenario: K users in priority order
        allocation: Per-user E_s, z, E_c
        config: System constants (num_users must equal K)

    Returns:
        ServiceOutcome with timeline, accuracy, CAQA, flags and AvgCAQA

    Raises:
        InvalidAllocationError: On length mismatch between scenario, allocation and config
    """
    k = scenario.num_users
    if allocation.num_users != k or config.num_users != k:
        raise InvalidAllocationError(
            f"length mismatch: scenario K={k}, allocation K={allocation.num_users}, "
            f"config K={config.num_users}"
        )

    e_s, z, e_c = allocation.e_s, allocation.z, allocation.e_c
    gains = scenario.gains
    omega_min = scenario.omega_min

    n = sensing_cycles(e_s, config)
    upsilon = sensing_accuracy(n, config)
    eps = aeg(np.maximum(z, config.z_min), config)
    theta, x, omega = caqa(e_s, z, e_c, gains, config)
    times = timeline(e_s, z, config)

    t_c = e_c / config.p_c
    t_total = times.t_arr + times.t_que + times.t_gen + times.t_wait + t_c
    total_energy = float(e_s.sum() + e_c.sum())

    return ServiceOutcome(
        n_cycles=n,
        t_arr=times.t_arr,
        t_que=times.t_que,
        t_gen=times.t_gen,
        t_wait=times.t_wait,
        t_c=t_c,
        t_total=t_total,
        upsilon=upsilon,
        eps=eps,
        theta=theta,
        rate=transmission_rate(gains, config),
        x_pixels=x,
        quality=np.minimum(x / config.display_capacity, 1.0),
        omega=omega,
        omega_min=omega_min,
        c1=t_total <= config.t_max + TIME_TOL,
        c2=bool(total_energy <= config.e_max + ENERGY_TOL),
        c3=(e_s >= 0) & (e_s <= config.e_s_max + ENERGY_TOL),
        c4=(z >= config.z_min) & (z <= config.z_max),
        c5=omega >= omega_min - CAQA_TOL,
        c6=(x >= 0) & (x <= config.display_capacity * (1 + DISPLAY_RTOL)),
        total_energy=total_energy,
    )
