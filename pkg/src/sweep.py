# src/sweep.py

"""
Parameter sweeps over system axes, policies and seeds.

Every sweep point is an independent evaluation: its test scenarios are
drawn from the point's own seed, so results are pure functions of
(system, axis value, policy, checkpoint, seed) and the pool can run them
in any order.
"""

import logging
from dataclasses import dataclass, field
from itertools import product
from multiprocessing import Pool, cpu_count
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from .baselines import evaluate_policy, get_policy
from .config import ConfigError, SystemConfig, config_to_dict
from .sac_agent import SACAgent
from .scenario_providers import draw_test_set

logger = logging.getLogger(__name__)

# Axes that map onto SystemConfig fields; 'z_fixed' and 'alpha' are policy parameters
SYSTEM_AXES = {'num_users', 'e_max', 'server_capacity', 't_max', 'coverage_radius_m', 'e_s_max'}
POLICY_AXES = {'z_fixed', 'alpha'}


@dataclass
class SweepResult:
    """Outcome of one (axis value[, second axis value], policy, seed) evaluation."""
    axis: str
    value: Any
    policy: str
    seed: int
    params: Dict[str, Any]
    metrics: Dict[str, float] = field(default_factory=dict)
    axis2: Optional[str] = None
    value2: Any = None


@dataclass
class SweepSpec:
    """
    What to sweep.

    Attributes:
        axis: SystemConfig field or policy parameter to vary
        values: Axis values
        policies: List of (policy name, fixed parameters)
        seeds: One independent test set per seed
        episodes / iterations: Test set size per point
        checkpoints: Learned-policy agents, {policy: {axis value: checkpoint dir}}
            or {policy: checkpoint dir} when one agent fits every point
        axis2 / values2: Optional second axis; the grid is the Cartesian
            product of both value lists (e.g. z_fixed x server_capacity)
    """
    axis: str
    values: List[Any]
    policies: List[Tuple[str, Dict[str, Any]]]
    seeds: List[int] = field(default_factory=lambda: [0])
    episodes: int = 200
    iterations: int = 10
    checkpoints: Dict[str, Any] = field(default_factory=dict)
    axis2: Optional[str] = None
    values2: List[Any] = field(default_factory=list)

    def __post_init__(self):
        axes = SYSTEM_AXES | POLICY_AXES
        for axis in (self.axis, self.axis2):
            if axis is not None and axis not in axes:
                raise ConfigError(f"unknown sweep axis '{axis}'; choose from {sorted(axes)}")
        if not self.values:
            raise ConfigError("sweep needs at least one axis value")
        if self.axis2 is not None:
            if self.axis2 == self.axis:
                raise ConfigError(f"both sweep axes are '{self.axis}'")
            if not self.values2:
                raise ConfigError(f"second sweep axis '{self.axis2}' has no values")
        elif self.values2:
            raise ConfigError("values2 given without a second sweep axis")
        for name, _ in self.policies:
            get_policy(name)

    @property
    def grid(self) -> List[Tuple[Any, Any]]:
        """(value, value2) pairs; value2 is None for a single-axis sweep."""
        return list(product(self.values, self.values2 if self.axis2 is not None else [None]))

    def checkpoint_for(self, policy: str, value: Any) -> Optional[str]:
        entry = self.checkpoints.get(policy)
        if isinstance(entry, dict):
            return entry.get(value)
        return entry


class SweepRunner:
    """
    Grid evaluation of policies over one or two sweep axes.

    Features:
    - Parallel processing using multiprocessing
    - Per-job failure isolation (a failed point is logged and dropped)
    - Tabular results for CSV export
    """

    def __init__(self, system: SystemConfig, n_jobs: int = 1):
        """
        Initialize the runner.

        Args:
            system: Base system constants; the sweep axes override its fields
            n_jobs: Number of parallel jobs (-1 = use all CPUs, 1 = serial)
        """
        self.system = system
        self.n_jobs = cpu_count() if n_jobs == -1 else n_jobs

    def run(self, spec: SweepSpec) -> List[SweepResult]:
        """
        Evaluate every (grid point, policy, seed) combination.

        Returns:
            SweepResults in job order (failed jobs omitted)
        """
        system_dict = config_to_dict(self.system)
        jobs = []
        for (value, value2), (policy, params), seed in product(spec.grid, spec.policies, spec.seeds):
            jobs.append((system_dict, spec.axis, value, spec.axis2, value2, policy, dict(params), seed,
                         spec.episodes, spec.iterations, spec.checkpoint_for(policy, value)))

        axes = spec.axis if spec.axis2 is None else f"{spec.axis} x {spec.axis2}"
        logger.info("Sweeping %s over %d points x %d policies x %d seeds (%d jobs)",
                    axes, len(spec.grid), len(spec.policies), len(spec.seeds), len(jobs))

        if self.n_jobs == 1:
            results = [_run_sweep_point_worker(job) for job in jobs]
        else:
            with Pool(self.n_jobs) as pool:
                results = pool.map(_run_sweep_point_worker, jobs)

        failed = sum(r is None for r in results)
        if failed:
            logger.warning("%d of %d sweep points failed", failed, len(jobs))
        return [r for r in results if r is not None]


def _apply_axis(system: SystemConfig, params: Dict[str, Any], axis: Optional[str], value: Any) -> SystemConfig:
    if axis is None:
        return system
    if axis in SYSTEM_AXES:
        return system.with_overrides(**{axis: value})
    params[axis] = value
    return system


def _run_sweep_point_worker(args: Tuple) -> Optional[SweepResult]:
    """
    Worker for one sweep point.

    Defined at module level for multiprocessing compatibility.

    Returns:
        SweepResult or None if the point failed
    """
    system_dict, axis, value, axis2, value2, policy, params, seed, episodes, iterations, checkpoint = args
    point = f"{axis}={value}" if axis2 is None else f"{axis}={value} {axis2}={value2}"

    try:
        system = SystemConfig(**system_dict)
        params = dict(params)
        system = _apply_axis(system, params, axis, value)
        system = _apply_axis(system, params, axis2, value2)

        agent = None
        metadata = get_policy(policy)['metadata']
        if metadata.kind == 'learned':
            if checkpoint is None:
                raise ValueError(f"learned policy '{policy}' needs a checkpoint for {point}")
            agent = SACAgent.load(checkpoint)
            if agent.system.num_users != system.num_users:
                raise ValueError(f"checkpoint trained for K={agent.system.num_users}, sweep point has "
                                 f"K={system.num_users}")
            agent.system = system

        scenarios = draw_test_set(system, episodes, iterations, seed)
        evaluation = evaluate_policy(policy, scenarios, system, agent=agent, **params)
        return SweepResult(axis=axis, value=value, policy=policy, seed=seed, params=evaluation.params,
                           metrics=evaluation.summary, axis2=axis2, value2=value2)

    except Exception as e:
        logger.error("Sweep point %s policy=%s seed=%s failed: %s", point, policy, seed, e)
        return None


def sweep_table(results: Sequence[SweepResult]) -> pd.DataFrame:
    """Flat table, one row per sweep result; 'axis2'/'value2' columns only for two-axis sweeps."""
    rows = []
    for r in results:
        row = {'axis': r.axis, 'value': r.value}
        if r.axis2 is not None:
            row.update({'axis2': r.axis2, 'value2': r.value2})
        row.update({'policy': r.policy, 'seed': r.seed})
        row.update({f'param_{k}': v for k, v in r.params.items()})
        row.update(r.metrics)
        rows.append(row)
    return pd.DataFrame(rows)


def aggregate_over_seeds(table: pd.DataFrame) -> pd.DataFrame:
    """Mean and std of the headline metrics per (value[, value2], policy)."""
    if table.empty:
        return table
    keys = ['value', 'value2', 'policy'] if 'value2' in table.columns else ['value', 'policy']
    grouped = table.groupby(keys, sort=True)
    summary = grouped[['mean_avg_caqa', 'mean_theta', 'mean_quality', 'violation_rate']].mean()
    summary['seed_std_avg_caqa'] = grouped['mean_avg_caqa'].std(ddof=0)
    return summary.reset_index()


def print_sweep_summary(table: pd.DataFrame, axis: str):
    """
    Print a formatted summary of a sweep.

    Args:
        table: Output of ``aggregate_over_seeds``
        axis: Name of the swept axis (or 'a x b' for two axes)
    """
    if table.empty:
        print("No results to display")
        return

    print("\n" + "=" * 80)
    print(f"SWEEP SUMMARY - {axis}")
    print("=" * 80)
    print(f"{'Value':<18} {'Policy':<14} {'AvgCAQA':<10} {'Theta':<8} {'Quality':<9} {'Viol %':<8} {'Seed std':<8}")
    print("-" * 80)
    for _, row in table.iterrows():
        value = str(row['value']) if 'value2' not in row else f"{row['value']} / {row['value2']}"
        print(f"{value:<18} "
              f"{row['policy']:<14} "
              f"{row['mean_avg_caqa']:<10.4f} "
              f"{row['mean_theta']:<8.4f} "
              f"{row['mean_quality']:<9.4f} "
              f"{100 * row['violation_rate']:<8.2f} "
              f"{row['seed_std_avg_caqa']:<8.4f}")
    print("=" * 80 + "\n")
