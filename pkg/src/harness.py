"""
Experiment Harness - Training, Evaluation, Sweeps and Verification

Drives the experiments end to end:
- run_training: episodic SAC training with rolling AvgCAQA statistics,
  periodic checkpoints and a JSONL metrics stream
- run_eval: deterministic evaluation of a checkpoint or a baseline on a
  seeded test set, with the retraining flag
- run_sweep: policy comparison over one system axis (CSV output)
- verify: oracle and invariant suites

Every run writes into its own directory: ``config.yaml`` (the merged
configuration), ``metrics.jsonl`` and the command's result files.

Usage:
    from src.harness import ExperimentPlan, run_training

    plan = ExperimentPlan(train_episodes=50)
    summary = run_training(plan, SystemConfig(), agent_config_for('lpdrl_f'), seed=0, out_dir='runs/demo')
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml

from .baselines import PolicyEvaluation, evaluate_policy, get_policy
from .config import ConfigError, SystemConfig, config_hash, config_to_dict
from .neural_core import TrainingHaltedError
from .sac_agent import AgentConfig, SACAgent, agent_config_for
from .scenario_providers import Scenario, ScenarioManager, draw_test_set
from .sweep import SweepRunner, SweepSpec, aggregate_over_seeds, print_sweep_summary, sweep_table
from .verification import VerificationReport, run_verification

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODES = ('train', 'eval', 'sweep', 'compare', 'verify', 'verify-rce', 'gradcheck')
PAPER_SCALE = {'train_episodes': 6000, 'train_iterations': 50, 'test_episodes': 10000, 'test_iterations': 10}


# ============================================
# PLAN
# ============================================

@dataclass
class ExperimentPlan:
    """
    What to run and at which scale.

    Defaults are desk scale (800 x 50 training, 1000 x 10 testing);
    ``with_paper_scale`` switches to 6000 x 50 and 10000 x 10.

    Attributes:
        mode: One of MODES
        train_episodes / train_iterations: Training length (positions reset per episode)
        test_episodes / test_iterations: Test set size
        seeds: One run per seed
        out_dir: Root directory for run outputs
        checkpoint_every: Episodes between intermediate checkpoints (0 = final only)
        rolling_window: Episodes in the rolling AvgCAQA statistics
        retrain_drop_threshold: Relative drop below the training AvgCAQA that flags retraining
        provider / provider_configs: Training scenario source (see ScenarioManager)
        sweep_axis / sweep_values: Axis to sweep and its values
        sweep_axis2 / sweep_values2: Optional second axis, crossed with the first
        sweep_policies: Dicts with a 'policy' key plus fixed policy parameters
        sweep_checkpoints: Learned-policy checkpoints for sweeps
        n_jobs: Parallel sweep workers (-1 = all CPUs)
        record_wall_clock: Store elapsed seconds in metrics records
    """
    mode: str = 'train'
    train_episodes: int = 800
    train_iterations: int = 50
    test_episodes: int = 1000
    test_iterations: int = 10
    seeds: Tuple[int, ...] = (0,)
    out_dir: str = 'runs'
    checkpoint_every: int = 100
    rolling_window: int = 100
    retrain_drop_threshold: float = 0.25
    provider: str = 'random'
    provider_configs: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    sweep_axis: Optional[str] = None
    sweep_values: Tuple[Any, ...] = ()
    sweep_axis2: Optional[str] = None
    sweep_values2: Tuple[Any, ...] = ()
    sweep_policies: Tuple[Dict[str, Any], ...] = ({'policy': 'cgq_fsg', 'alpha': 0.2},)
    sweep_checkpoints: Dict[str, Any] = field(default_factory=dict)
    n_jobs: int = 1
    record_wall_clock: bool = True

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        self.sweep_values = tuple(self.sweep_values)
        self.sweep_values2 = tuple(self.sweep_values2)
        self.sweep_policies = tuple(dict(p) for p in self.sweep_policies)
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            ConfigError: On an unknown mode or non-positive sizes
        """
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode '{self.mode}'; choose from {MODES}")
        for name in ('train_episodes', 'train_iterations', 'test_episodes', 'test_iterations', 'rolling_window'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if not 0 < self.retrain_drop_threshold < 1:
            raise ConfigError("retrain_drop_threshold must lie in (0, 1)")
        for entry in self.sweep_policies:
            if 'policy' not in entry:
                raise ConfigError(f"sweep policy entry {entry} has no 'policy' key")

    def with_paper_scale(self) -> 'ExperimentPlan':
        return replace(self, **PAPER_SCALE)

    def policy_pairs(self) -> List[Tuple[str, Dict[str, Any]]]:
        pairs = []
        for entry in self.sweep_policies:
            params = {k: v for k, v in entry.items() if k != 'policy'}
            pairs.append((entry['policy'], params))
        return pairs


# ============================================
# METRICS STREAM
# ============================================

@dataclass
class MetricsRecord:
    """
    One training iteration, as written to ``metrics.jsonl``.

    Append-only; fields are added only with a schema_version bump.
    """
    episode: int
    iteration: int
    policy: str
    avg_caqa: float
    reward: float
    mean_theta: float
    mean_quality: float
    violators: int
    violations: Dict[str, int]
    losses: Dict[str, float]
    rolling_mean_avg_caqa: Optional[float] = None
    rolling_std_avg_caqa: Optional[float] = None
    wall_clock_s: Optional[float] = None
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_step(cls, episode: int, policy: str, record: Dict[str, Any]) -> 'MetricsRecord':
        loss_keys = ('critic_loss_1', 'critic_loss_2', 'actor_loss', 'temperature', 'entropy', 'gumbel_temperature')
        return cls(
            episode=episode,
            iteration=int(record['iteration']),
            policy=policy,
            avg_caqa=float(record['avg_caqa']),
            reward=float(record['reward']),
            mean_theta=float(record['mean_theta']),
            mean_quality=float(record['mean_quality']),
            violators=int(record['violators']),
            violations={k[len('violations_'):]: int(v) for k, v in record.items() if k.startswith('violations_')},
            losses={k: float(record[k]) for k in loss_keys if k in record},
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class MetricsWriter:
    """Append-only JSONL writer (one record per line, flushed per episode)."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, 'a')
        self.count = 0

    def write(self, record: MetricsRecord) -> None:
        self._file.write(record.to_json() + '\n')
        self.count += 1

    def flush(self) -> None:
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> List[Dict[str, Any]]:
    """Load a JSONL metrics file."""
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def write_run_config(run_dir, **sections) -> Path:
    """Write the merged configuration of a run as ``config.yaml`` and return its path."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    payload = {}
    for name, section in sections.items():
        if section is None:
            continue
        payload[name] = config_to_dict(section) if not isinstance(section, dict) else section
    path = run_dir / 'config.yaml'
    with open(path, 'w') as f:
        yaml.safe_dump(json.loads(json.dumps(payload)), f, sort_keys=True)
    return path


def seed_streams(seed: int, count: int) -> List[np.random.Generator]:
    """Independent generators derived from one seed (agent, environment, ...)."""
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(count)]


# ============================================
# TRAINING
# ============================================

@dataclass
class TrainingSummary:
    """Result of one training run."""
    variant: str
    seed: int
    run_dir: Path
    checkpoint: Optional[Path]
    episode_avg_caqa: List[float]
    episode_reward: List[float]
    window: int

    @property
    def final_mean_avg_caqa(self) -> float:
        return float(np.mean(self.episode_avg_caqa[-self.window:]))

    @property
    def final_std_avg_caqa(self) -> float:
        return float(np.std(self.episode_avg_caqa[-self.window:]))

    @property
    def final_reward_std(self) -> float:
        return float(np.std(self.episode_reward[-self.window:]))


def run_training(plan: ExperimentPlan, system: SystemConfig, agent_config: AgentConfig, seed: int,
                 out_dir, resume=None) -> TrainingSummary:
    """
    Train one agent.

    Each episode redraws user positions; each iteration draws fresh
    priorities, requirements and fades and runs one ``train_step``.

    Args:
        plan: Episode counts, checkpoint cadence, rolling window
        system: System constants
        agent_config: Learner hyperparameters (variant included)
        seed: Seeds the agent and environment streams
        out_dir: Run directory
        resume: Checkpoint directory to fine-tune from

    Returns:
        TrainingSummary

    Raises:
        TrainingHaltedError: On non-finite training signals (a ``halted.json``
            diagnostic is written to the run directory first)
    """
    run_dir = Path(out_dir)
    write_run_config(run_dir, system=system, agent=agent_config, experiment=asdict(plan))

    agent_rng, env_rng = seed_streams(seed, 2)
    if resume is not None:
        agent = SACAgent.load(resume)
        if agent.config.variant != agent_config.variant:
            raise ConfigError(f"checkpoint variant '{agent.config.variant}' != '{agent_config.variant}'")
        logger.info("Resuming %s from %s at iteration %d", agent.config.variant, resume, agent.iteration)
    else:
        agent = SACAgent(system, agent_config, agent_rng)

    manager = ScenarioManager(system, plan.provider, plan.provider_configs)
    env = agent.make_environment(manager.get_provider(), env_rng)
    first_episode = agent.iteration // plan.train_iterations
    variant = agent.config.variant

    episode_caqa: List[float] = []
    episode_reward: List[float] = []
    last_record: Dict[str, Any] = {}
    start = time.perf_counter()

    with MetricsWriter(run_dir / 'metrics.jsonl') as writer:
        for e in range(plan.train_episodes):
            episode = first_episode + e
            env.reset_episode()
            caqa_sum = reward_sum = 0.0
            records = []
            for _ in range(plan.train_iterations):
                try:
                    last_record = agent.train_step(env)
                except TrainingHaltedError as err:
                    _write_halt_diagnostic(run_dir, agent, episode, err, last_record)
                    raise
                caqa_sum += last_record['avg_caqa']
                reward_sum += last_record['reward']
                records.append(MetricsRecord.from_step(episode, variant, last_record))

            episode_caqa.append(caqa_sum / plan.train_iterations)
            episode_reward.append(reward_sum / plan.train_iterations)
            window = episode_caqa[-plan.rolling_window:]
            rolling_mean, rolling_std = float(np.mean(window)), float(np.std(window))

            records[-1].rolling_mean_avg_caqa = rolling_mean
            records[-1].rolling_std_avg_caqa = rolling_std
            elapsed = time.perf_counter() - start if plan.record_wall_clock else None
            for record in records:
                record.wall_clock_s = elapsed
                writer.write(record)
            writer.flush()

            logger.info("%s seed %d episode %d: AvgCAQA %.4f (rolling %.4f +/- %.4f), reward %.4f",
                        variant, seed, episode, episode_caqa[-1], rolling_mean, rolling_std, episode_reward[-1])

            if plan.checkpoint_every and (e + 1) % plan.checkpoint_every == 0 and e + 1 < plan.train_episodes:
                agent.save(run_dir / 'checkpoints' / f'episode_{episode + 1:05d}')

    summary = TrainingSummary(variant=variant, seed=seed, run_dir=run_dir, checkpoint=None,
                              episode_avg_caqa=episode_caqa, episode_reward=episode_reward,
                              window=plan.rolling_window)
    agent.reference_avg_caqa = summary.final_mean_avg_caqa
    summary.checkpoint = agent.save(run_dir / 'checkpoint')
    return summary


def _write_halt_diagnostic(run_dir: Path, agent: SACAgent, episode: int, error: Exception,
                           last_record: Dict[str, Any]) -> None:
    diagnostic = {
        'error': str(error),
        'episode': episode,
        'iteration': agent.iteration,
        'updates': agent.updates,
        'temperature': agent.temperature,
        'gumbel_temperature': agent.gumbel_temperature,
        'last_record': {k: v for k, v in last_record.items() if isinstance(v, (int, float, str))},
    }
    with open(run_dir / 'halted.json', 'w') as f:
        json.dump(diagnostic, f, indent=2, default=float)
    logger.error("Training halted at iteration %d: %s", agent.iteration, error)


# ============================================
# EVALUATION
# ============================================

@dataclass
class EvalSummary:
    """Deterministic evaluation of one policy on a seeded test set."""
    policy: str
    seed: int
    evaluation: PolicyEvaluation
    reference_avg_caqa: Optional[float] = None
    needs_retraining: bool = False

    @property
    def metrics(self) -> Dict[str, float]:
        return self.evaluation.summary


def run_eval(plan: ExperimentPlan, system: SystemConfig, policy: str, seed: int,
             checkpoint=None, scenarios: Optional[List[Scenario]] = None, out_dir=None,
             **params) -> EvalSummary:
    """
    Evaluate a baseline or a trained checkpoint.

    Args:
        plan: Test set size and retraining threshold
        system: System constants (a checkpoint's K must match)
        policy: Registered policy name
        seed: Test set seed
        checkpoint: Agent directory for learned policies
        scenarios: Explicit test set (overrides the seeded draw)
        out_dir: If given, ``eval.json`` and ``records.csv`` are written there
        **params: Policy parameters

    Returns:
        EvalSummary; ``needs_retraining`` is set when the mean AvgCAQA falls
        more than ``retrain_drop_threshold`` below the checkpoint's training value
    """
    metadata = get_policy(policy)['metadata']
    agent = None
    if metadata.kind == 'learned':
        if checkpoint is None:
            raise ConfigError(f"policy '{policy}' needs --checkpoint")
        agent = SACAgent.load(checkpoint)
        if agent.system.num_users != system.num_users:
            raise ConfigError(f"checkpoint K={agent.system.num_users} does not match K={system.num_users}")
        agent.system = system

    if scenarios is None:
        scenarios = draw_test_set(system, plan.test_episodes, plan.test_iterations, seed)
    evaluation = evaluate_policy(policy, scenarios, system, agent=agent, **params)

    summary = EvalSummary(policy=policy, seed=seed, evaluation=evaluation)
    if agent is not None and agent.reference_avg_caqa:
        summary.reference_avg_caqa = float(agent.reference_avg_caqa)
        floor = summary.reference_avg_caqa * (1.0 - plan.retrain_drop_threshold)
        summary.needs_retraining = evaluation.summary['mean_avg_caqa'] < floor
        if summary.needs_retraining:
            logger.warning("%s AvgCAQA %.4f is more than %.0f%% below its training value %.4f; retraining advised",
                           policy, evaluation.summary['mean_avg_caqa'], 100 * plan.retrain_drop_threshold,
                           summary.reference_avg_caqa)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        evaluation.records.to_csv(out_dir / 'records.csv', index=False)
        with open(out_dir / 'eval.json', 'w') as f:
            json.dump({
                'policy': policy,
                'params': evaluation.params,
                'seed': seed,
                'metrics': summary.metrics,
                'reference_avg_caqa': summary.reference_avg_caqa,
                'needs_retraining': summary.needs_retraining,
                'config_hash': config_hash(system=system),
            }, f, indent=2)
    return summary


def print_eval_summary(summaries: Sequence[EvalSummary]):
    """Print one line per evaluated policy."""
    if not summaries:
        print("No results to display")
        return

    print("\n" + "=" * 80)
    print("EVALUATION SUMMARY")
    print("=" * 80)
    print(f"{'Policy':<20} {'Seed':<6} {'AvgCAQA':<10} {'Std':<8} {'Theta':<8} {'Quality':<9} {'Viol %':<8} Retrain")
    print("-" * 80)
    for s in summaries:
        m = s.metrics
        print(f"{s.policy:<20} "
              f"{s.seed:<6} "
              f"{m['mean_avg_caqa']:<10.4f} "
              f"{m['std_avg_caqa']:<8.4f} "
              f"{m['mean_theta']:<8.4f} "
              f"{m['mean_quality']:<9.4f} "
              f"{100 * m['violation_rate']:<8.2f} "
              f"{'yes' if s.needs_retraining else 'no'}")
    print("=" * 80 + "\n")


# ============================================
# SWEEPS AND VERIFICATION
# ============================================

def run_sweep(plan: ExperimentPlan, system: SystemConfig, out_dir=None) -> pd.DataFrame:
    """
    Evaluate ``plan.sweep_policies`` at every ``plan.sweep_values`` point for every seed.

    With ``plan.sweep_axis2`` set, the points are the Cartesian product of
    both value lists.

    Returns:
        Seed-aggregated table; raw and aggregated CSVs are written to ``out_dir``
    """
    if plan.sweep_axis is None:
        raise ConfigError("sweep needs experiment.sweep_axis and sweep_values")
    spec = SweepSpec(
        axis=plan.sweep_axis,
        values=list(plan.sweep_values),
        policies=plan.policy_pairs(),
        seeds=list(plan.seeds),
        episodes=plan.test_episodes,
        iterations=plan.test_iterations,
        checkpoints=plan.sweep_checkpoints,
        axis2=plan.sweep_axis2,
        values2=list(plan.sweep_values2),
    )
    results = SweepRunner(system, n_jobs=plan.n_jobs).run(spec)
    table = sweep_table(results)
    summary = aggregate_over_seeds(table)

    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        table.to_csv(out_dir / 'sweep.csv', index=False)
        summary.to_csv(out_dir / 'sweep_summary.csv', index=False)
        logger.info("Wrote sweep tables to %s", out_dir)

    axes = plan.sweep_axis if plan.sweep_axis2 is None else f"{plan.sweep_axis} x {plan.sweep_axis2}"
    print_sweep_summary(summary, axes)
    return summary


def verify(suites: Optional[Sequence[str]] = None, seed: int = 0, out_dir=None) -> VerificationReport:
    """Run verification suites, print the report and optionally save it as CSV."""
    report = run_verification(suites, seed=seed)
    report.print()
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.to_frame().to_csv(out_dir / 'verification.csv', index=False)
    return report


# ============================================
# LEARNING GAIN
# ============================================

def compare_learning_gain(plan: ExperimentPlan, system: SystemConfig, out_dir,
                          agent_overrides: Optional[Dict[str, Any]] = None,
                          alpha: float = 0.2) -> pd.DataFrame:
    """
    Train LPDRL-F and LPDRL on every seed and score CGQ-FSG on matching test sets.

    Returns:
        One row per (seed, policy) with final-window AvgCAQA mean and reward std
    """
    out_dir = Path(out_dir)
    overrides = agent_overrides or {}
    rows = []
    for seed in plan.seeds:
        for variant in ('lpdrl_f', 'lpdrl'):
            summary = run_training(plan, system, agent_config_for(variant, **overrides), seed,
                                   out_dir / f'{variant}_seed{seed}')
            rows.append({'seed': seed, 'policy': variant, 'avg_caqa': summary.final_mean_avg_caqa,
                         'reward_std': summary.final_reward_std})
        scenarios = draw_test_set(system, plan.rolling_window, plan.train_iterations, seed)
        cgq = evaluate_policy('cgq_fsg', scenarios, system, alpha=alpha).records
        episode_means = cgq['avg_caqa'].to_numpy().reshape(plan.rolling_window, plan.train_iterations).mean(axis=1)
        rows.append({'seed': seed, 'policy': 'cgq_fsg', 'avg_caqa': float(episode_means.mean()),
                     'reward_std': float(np.std(cgq['reward'].to_numpy()
                                                .reshape(plan.rolling_window, plan.train_iterations).mean(axis=1)))})

    table = pd.DataFrame(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / 'learning_gain.csv', index=False)
    return table


def print_learning_gain(table: pd.DataFrame) -> None:
    """Seed-averaged AvgCAQA per policy and the LPDRL-F ratio to each of the others."""
    means = table.groupby('policy')[['avg_caqa', 'reward_std']].mean()
    reference = means.loc['lpdrl_f', 'avg_caqa'] if 'lpdrl_f' in means.index else float('nan')

    print("\n" + "=" * 80)
    print("LEARNING GAIN")
    print("=" * 80)
    print(f"{'Policy':<20} {'AvgCAQA':<10} {'Reward std':<12} {'LPDRL-F ratio':<14}")
    print("-" * 80)
    for policy, row in means.iterrows():
        ratio = reference / row['avg_caqa'] if row['avg_caqa'] > 0 else float('nan')
        print(f"{policy:<20} {row['avg_caqa']:<10.4f} {row['reward_std']:<12.4f} {ratio:<14.3f}")
    print("=" * 80 + "\n")
