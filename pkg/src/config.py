"""
System Configuration - Physical and Algorithmic Constants

Holds every constant of the ISAC-AIGC service model (geometry, link budget,
sensing fit, generation model, energy and time budgets) in one frozen
dataclass, plus the YAML loading helpers shared by the agent, baseline and
experiment configs.

Usage:
    from src.config import SystemConfig, load_config

    config = SystemConfig(num_users=12, e_max=0.8)
    sections = load_config('configs/default.yaml')
    config = dataclass_from_dict(SystemConfig, sections.get('system', {}))
"""

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Type, TypeVar

import yaml


T = TypeVar('T')

# Path-loss model: PL(d) = 128.1 + 37.6 log10(d / 1 km) dB
PATH_LOSS_INTERCEPT_DB = 128.1
PATH_LOSS_SLOPE_DB = 37.6


class ConfigError(ValueError):
    """Raised when a configuration value or file is invalid."""
    pass


def path_loss_db(distance_m: float) -> float:
    """Large-scale path loss in dB at a distance in metres."""
    return PATH_LOSS_INTERCEPT_DB + PATH_LOSS_SLOPE_DB * math.log10(distance_m / 1000.0)


@dataclass(frozen=True)
class SystemConfig:
    """
    Physical and algorithmic constants of one ISAC-AIGC cell.

    Defaults reproduce the simulation table (K=10 users in a 200 m cell,
    100 MHz, 1 J and 1 s budgets, 512x512 displays, 20 TFLOPS server).
    The sensing-fit triple (xi, varpi, tau) is not published and is set so
    that ~200 sensing cycles give ~0.87 accuracy.

    Attributes:
        coverage_radius_m: Radius of the ISAC device coverage disk (m)
        num_users: Number of users K
        bandwidth_hz: Total bandwidth B, split equally into K subchannels
        t_max: Maximum service time per user (s)
        t_s: Duration of one sensing cycle (s)
        display_capacity: Maximum display resolution D_c (pixels)
        e_max: Total ISAC energy budget (J)
        e_s_max: Per-user sensing energy cap (J)
        bits_per_pixel: Bits per pixel beta
        z_min / z_max: Allowed range of generating steps
        flops_per_step: Computation per generating step chi (FLOP)
        server_capacity: Server computation capacity f (FLOPS)
        eps_fwd: Forward-process scaling of the average error of generation
        mu: Decay rate of the generation error per extra step
        p_s / p_c: Sensing and communication transmit power (W)
        noise_psd: Noise power spectral density delta^2 (W/Hz)
        xi / varpi / tau: Sensing accuracy fit, Upsilon = xi - varpi n^-tau
        l_n: Normalization gain for the log channel gain (None = edge path loss)
        omega_min_range: Interval the minimum CAQA requirements are drawn from
        fade_floor: Rayleigh power fades below this value are redrawn
    """
    coverage_radius_m: float = 200.0
    num_users: int = 10
    bandwidth_hz: float = 1e8
    t_max: float = 1.0
    t_s: float = 6e-5
    display_capacity: float = 512 * 512
    e_max: float = 1.0
    e_s_max: float = 0.1
    bits_per_pixel: float = 24.0
    z_min: int = 5
    z_max: int = 10
    flops_per_step: float = 0.2e12
    server_capacity: float = 20e12
    eps_fwd: float = 0.03
    mu: float = 0.2
    p_s: float = 1.0
    p_c: float = 1.5
    noise_psd: float = 10 ** (-20.4)
    xi: float = 0.95
    varpi: float = 2.0
    tau: float = 0.6
    l_n: Optional[float] = None
    omega_min_range: Tuple[float, float] = (0.4, 0.45)
    fade_floor: float = 1e-6

    def __post_init__(self):
        # YAML delivers lists; keep the dataclass hashable
        if not isinstance(self.omega_min_range, tuple):
            object.__setattr__(self, 'omega_min_range', tuple(self.omega_min_range))
        self.validate()

    def validate(self) -> None:
        """
        Check parameter domains.

        Raises:
            ConfigError: If any invariant is violated
        """
        if not 0 < self.xi <= 1:
            raise ConfigError(f"xi must lie in (0, 1], got {self.xi}")
        if self.varpi <= 0 or self.tau <= 0:
            raise ConfigError("varpi and tau must be positive")
        if not 0 < self.eps_fwd <= 1:
            raise ConfigError(f"eps_fwd must lie in (0, 1], got {self.eps_fwd}")
        if self.mu <= 0:
            raise ConfigError(f"mu must be positive, got {self.mu}")
        if int(self.z_min) != self.z_min or int(self.z_max) != self.z_max:
            raise ConfigError("z_min and z_max must be integers")
        if self.z_min < 1 or self.z_max < self.z_min:
            raise ConfigError(f"need 1 <= z_min <= z_max, got [{self.z_min}, {self.z_max}]")
        if int(self.num_users) != self.num_users or self.num_users < 1:
            raise ConfigError(f"num_users must be a positive integer, got {self.num_users}")

        positive = {
            'coverage_radius_m': self.coverage_radius_m,
            'bandwidth_hz': self.bandwidth_hz,
            't_max': self.t_max,
            't_s': self.t_s,
            'display_capacity': self.display_capacity,
            'e_max': self.e_max,
            'e_s_max': self.e_s_max,
            'bits_per_pixel': self.bits_per_pixel,
            'flops_per_step': self.flops_per_step,
            'server_capacity': self.server_capacity,
            'p_s': self.p_s,
            'p_c': self.p_c,
            'noise_psd': self.noise_psd,
            'fade_floor': self.fade_floor,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{name} must be strictly positive, got {value}")

        if self.e_s_max > self.e_max:
            raise ConfigError(f"e_s_max ({self.e_s_max}) exceeds e_max ({self.e_max})")
        if self.l_n is not None and not self.l_n > 0:
            raise ConfigError(f"l_n must be positive when given, got {self.l_n}")

        low, high = self.omega_min_range
        if not 0 < low <= high < 1:
            raise ConfigError(f"omega_min_range must satisfy 0 < low <= high < 1, got {self.omega_min_range}")

    # ============================================
    # DERIVED QUANTITIES
    # ============================================

    @property
    def normalization_gain(self) -> float:
        """L_n: path-loss-only gain at the coverage edge unless overridden."""
        if self.l_n is not None:
            return self.l_n
        return 10 ** (-path_loss_db(self.coverage_radius_m) / 10)

    @property
    def num_steps(self) -> int:
        """Number of admissible generating steps, z_max - z_min + 1."""
        return int(self.z_max - self.z_min + 1)

    @property
    def subchannel_bandwidth(self) -> float:
        return self.bandwidth_hz / self.num_users

    @property
    def display_bits(self) -> float:
        """Bits needed to fill one display, beta * D_c."""
        return self.bits_per_pixel * self.display_capacity

    def with_overrides(self, **overrides) -> 'SystemConfig':
        """Copy with some fields replaced (re-validated)."""
        return replace(self, **overrides)


# ============================================
# YAML LOADING
# ============================================

def load_config(path) -> Dict[str, Dict[str, Any]]:
    """
    Load a YAML config file into its sections.

    Args:
        path: Path to a ``.yaml`` file with optional sections
            ``system``, ``agent``, ``baseline``, ``experiment``

    Returns:
        Dict mapping section name to a dict of field values

    Raises:
        ConfigError: If the file is missing, malformed or has unknown sections
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")

    try:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"Malformed YAML in {path}: {e}") from e

    if not isinstance(data, dict):
        raise ConfigError(f"Top level of {path} must be a mapping")

    allowed = {'system', 'agent', 'baseline', 'experiment'}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"Unknown config sections {sorted(unknown)}; allowed: {sorted(allowed)}")

    return {name: dict(data.get(name) or {}) for name in allowed}


def dataclass_from_dict(cls: Type[T], data: Optional[Dict[str, Any]], **overrides) -> T:
    """
    Build a config dataclass from a dict, rejecting unknown keys.

    Args:
        cls: Dataclass type
        data: Field values (may be None)
        **overrides: Values that take precedence over ``data`` (None is skipped)

    Returns:
        Instance of ``cls``

    Raises:
        ConfigError: On unknown keys or values the dataclass rejects
    """
    values = dict(data or {})
    values.update({k: v for k, v in overrides.items() if v is not None})

    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"Unknown {cls.__name__} keys: {sorted(unknown)}")

    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"Invalid {cls.__name__}: {e}") from e


def config_to_dict(config) -> Dict[str, Any]:
    """Plain dict of a config dataclass, tuples turned into lists."""
    if not is_dataclass(config):
        raise TypeError(f"Expected a dataclass instance, got {type(config).__name__}")
    return json.loads(json.dumps(asdict(config)))


def config_hash(**sections) -> str:
    """
    SHA-256 of the canonical JSON of one or more config dataclasses.

    Example:
        >>> config_hash(system=SystemConfig(), agent=AgentConfig())
    """
    payload = {name: config_to_dict(cfg) for name, cfg in sorted(sections.items()) if cfg is not None}
    canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()
