"""
Command-line entry point.

    python -m src.harness_cli train --policy lpdrl_f --seed 0 --out runs/lpdrl_f
    python -m src.harness_cli eval --policy cgq_fsg --alpha 0.2
    python -m src.harness_cli eval --policy lpdrl_f --checkpoint runs/lpdrl_f/lpdrl_f_seed0/checkpoint
    python -m src.harness_cli sweep --axis num_users --values 10,12,14,16 --policy cgq_fsg
    python -m src.harness_cli sweep --axis z_fixed --values 5,7,9 --axis server_capacity --values 2e12,20e12 --policy fixed_step_oracle
    python -m src.harness_cli compare --seed 0
    python -m src.harness_cli verify
    python -m src.harness_cli --list-policies

Exit codes: 0 success, 1 verification or training failure, 2 invalid configuration.
"""

import argparse
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .baselines import BaselineConfig, PolicyNotFoundError, get_all_policies, get_policy
from .config import ConfigError, SystemConfig, dataclass_from_dict, load_config
from .harness import (
    ExperimentPlan,
    compare_learning_gain,
    print_eval_summary,
    print_learning_gain,
    run_eval,
    run_sweep,
    run_training,
    verify,
)
from .neural_core import CheckpointError, TrainingHaltedError
from .sac_agent import agent_config_for
from .scenario_providers import ScenarioError
from .verification import RCE_SUITES, SUITES

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / 'configs' / 'default.yaml'
PAPER_CONFIG = Path(__file__).resolve().parent.parent / 'configs' / 'paper_scale.yaml'

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='isac-aigc', description="ISAC-AIGC resource allocation experiments")
    parser.add_argument('--list-policies', action='store_true', help="List registered policies and exit")
    parser.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help="YAML config file (default: configs/default.yaml)")
    common.add_argument('--seed', type=int, help="Single seed (overrides experiment.seeds)")
    common.add_argument('--episodes', type=int, help="Training episodes (train) or test episodes (eval, sweep)")
    common.add_argument('--out', help="Output directory")
    common.add_argument('--paper-scale', action='store_true', help="6000x50 training, 10000x10 testing")

    policy = argparse.ArgumentParser(add_help=False)
    policy.add_argument('--policy', action='append', help="Policy name (repeatable for eval and sweep)")
    policy.add_argument('--alpha', type=float, help="CGQ-FSG sensing proportion")
    policy.add_argument('--z-fixed', type=int, help="Fixed generating step (saqa_fg, fixed_step_oracle)")

    sub = parser.add_subparsers(dest='command')

    train = sub.add_parser('train', parents=[common, policy], help="Train a learned policy")
    train.add_argument('--resume', help="Checkpoint directory to fine-tune from")

    ev = sub.add_parser('eval', parents=[common, policy], help="Evaluate policies on a seeded test set")
    ev.add_argument('--checkpoint', help="Agent checkpoint for learned policies")

    sweep = sub.add_parser('sweep', parents=[common, policy], help="Evaluate policies along one or two axes")
    sweep.add_argument('--axis', action='append',
                       help="num_users, e_max, server_capacity, t_max, z_fixed, alpha, ... (give twice for a grid)")
    sweep.add_argument('--values', action='append', help="Comma-separated values, one --values per --axis")
    sweep.add_argument('--checkpoint', help="Agent checkpoint used at every point (learned policies)")
    sweep.add_argument('--jobs', type=int, help="Parallel workers (-1 = all CPUs)")

    cmp = sub.add_parser('compare', parents=[common], help="Train LPDRL-F and LPDRL and compare them with CGQ-FSG")
    cmp.add_argument('--alpha', type=float, help="CGQ-FSG sensing proportion")

    ver = sub.add_parser('verify', parents=[common], help="Run all verification suites")
    ver.add_argument('--suite', action='append', choices=list(SUITES), help="Run only this suite (repeatable)")
    sub.add_parser('verify-rce', parents=[common], help="RCE oracle, safety and complexity suites")
    sub.add_parser('gradcheck', parents=[common], help="Finite-difference checks of every agent network")
    return parser


def print_policy_list() -> None:
    print("\n" + "=" * 80)
    print("REGISTERED POLICIES")
    print("=" * 80)
    for name, entry in get_all_policies().items():
        meta = entry['metadata']
        print(f"{name:<20} {meta.kind:<10} {meta.display_name}")
        print(f"{'':<20} {meta.description}")
        for param, spec in meta.parameters.items():
            print(f"{'':<22}--{param.replace('_', '-')}: {spec.get('type')} "
                  f"[{spec.get('min', '')}, {spec.get('max', '')}] default {spec.get('default')}")
    print("=" * 80 + "\n")


# ============================================
# CONFIG ASSEMBLY
# ============================================

def load_sections(args) -> Dict[str, Dict[str, Any]]:
    path = args.config
    if path is None:
        path = PAPER_CONFIG if getattr(args, 'paper_scale', False) else DEFAULT_CONFIG
        if not Path(path).exists():
            logger.warning("No config file at %s; using built-in defaults", path)
            return {'system': {}, 'agent': {}, 'baseline': {}, 'experiment': {}}
    return load_config(path)


def build_plan(args, sections) -> ExperimentPlan:
    mode = args.command
    plan = dataclass_from_dict(ExperimentPlan, sections['experiment'], mode=mode)
    if getattr(args, 'paper_scale', False):
        plan = plan.with_paper_scale()
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides['seeds'] = (args.seed,)
    if args.episodes is not None:
        overrides['train_episodes' if mode in ('train', 'compare') else 'test_episodes'] = args.episodes
    if args.out is not None:
        overrides['out_dir'] = args.out
    if getattr(args, 'jobs', None) is not None:
        overrides['n_jobs'] = args.jobs
    if overrides:
        plan = dataclass_from_dict(ExperimentPlan, {**asdict(plan), **overrides})
    return plan


def policy_params(args, name: str, baseline: BaselineConfig) -> Dict[str, Any]:
    """Parameters for ``name`` from CLI flags, falling back to the baseline section."""
    specs = get_policy(name)['metadata'].parameters
    params = {}
    alpha = args.alpha if args.alpha is not None else baseline.alpha
    z_fixed = args.z_fixed if args.z_fixed is not None else baseline.z_fixed
    if 'alpha' in specs:
        params['alpha'] = alpha
    if 'assume_perfect_accuracy' in specs:
        params['assume_perfect_accuracy'] = baseline.assume_perfect_accuracy
    if 'z_fixed' in specs and z_fixed is not None:
        params['z_fixed'] = z_fixed
    return params


# ============================================
# COMMANDS
# ============================================

def cmd_train(args, sections, system: SystemConfig, plan: ExperimentPlan) -> int:
    policies = args.policy or [sections['agent'].get('variant', 'lpdrl_f')]
    agent_section = {k: v for k, v in sections['agent'].items() if k != 'variant'}
    for name in policies:
        meta = get_policy(name)['metadata']
        if meta.kind != 'learned':
            raise ConfigError(f"policy '{name}' is not trainable")
        fixed_step = args.z_fixed if args.z_fixed is not None else agent_section.get('fixed_step')
        agent_config = agent_config_for(meta.agent_variant, **{**agent_section, 'fixed_step': fixed_step})
        for seed in plan.seeds:
            out_dir = Path(plan.out_dir) / f'{name}_seed{seed}'
            summary = run_training(plan, system, agent_config, seed, out_dir, resume=args.resume)
            print(f"{name} seed {seed}: final AvgCAQA {summary.final_mean_avg_caqa:.4f} "
                  f"+/- {summary.final_std_avg_caqa:.4f}, checkpoint {summary.checkpoint}")
    return EXIT_OK


def cmd_eval(args, sections, system: SystemConfig, plan: ExperimentPlan) -> int:
    baseline = dataclass_from_dict(BaselineConfig, sections['baseline'])
    baseline.validate_for(system)
    policies = args.policy or [baseline.variant]
    summaries = []
    for name in policies:
        params = policy_params(args, name, baseline)
        for seed in plan.seeds:
            out_dir = Path(plan.out_dir) / f'eval_{name}_seed{seed}'
            summaries.append(run_eval(plan, system, name, seed, checkpoint=args.checkpoint, out_dir=out_dir,
                                      **params))
    print_eval_summary(summaries)
    return EXIT_OK


def _parse_values(text: str) -> Tuple[Any, ...]:
    return tuple(_parse_value(v) for v in text.split(','))


def cmd_sweep(args, sections, system: SystemConfig, plan: ExperimentPlan) -> int:
    baseline = dataclass_from_dict(BaselineConfig, sections['baseline'])
    axes, values = args.axis or [], args.values or []
    overrides: Dict[str, Any] = {}
    if len(axes) > 2:
        raise ConfigError(f"at most two sweep axes, got {axes}")
    if axes:
        if len(values) != len(axes):
            raise ConfigError("give one --values list per --axis")
        overrides['sweep_axis'] = axes[0]
        overrides['sweep_values'] = _parse_values(values[0])
        overrides['sweep_axis2'] = axes[1] if len(axes) == 2 else None
        overrides['sweep_values2'] = _parse_values(values[1]) if len(axes) == 2 else ()
    elif len(values) == 1:
        overrides['sweep_values'] = _parse_values(values[0])
    elif values:
        raise ConfigError("several --values lists need matching --axis flags")
    if args.policy:
        overrides['sweep_policies'] = tuple({'policy': n, **policy_params(args, n, baseline)} for n in args.policy)
        if args.checkpoint:
            overrides['sweep_checkpoints'] = {n: args.checkpoint for n in args.policy}
    if overrides:
        plan = dataclass_from_dict(ExperimentPlan, {**asdict(plan), **overrides})
    name = plan.sweep_axis if plan.sweep_axis2 is None else f'{plan.sweep_axis}_x_{plan.sweep_axis2}'
    table = run_sweep(plan, system, out_dir=Path(plan.out_dir) / f'sweep_{name}')
    return EXIT_OK if not table.empty else EXIT_FAILURE


def cmd_compare(args, sections, system: SystemConfig, plan: ExperimentPlan) -> int:
    baseline = dataclass_from_dict(BaselineConfig, sections['baseline'])
    variant_keys = ('variant', 'fixed_step', 'filter_mode', 'joint_comm')
    agent_section = {k: v for k, v in sections['agent'].items() if k not in variant_keys}
    alpha = args.alpha if args.alpha is not None else baseline.alpha
    table = compare_learning_gain(plan, system, Path(plan.out_dir) / 'learning_gain',
                                  agent_overrides=agent_section, alpha=alpha)
    print_learning_gain(table)
    return EXIT_OK


def cmd_verify(args, suites: Optional[List[str]], plan: ExperimentPlan) -> int:
    report = verify(suites, seed=plan.seeds[0], out_dir=plan.out_dir)
    return EXIT_OK if report.passed else EXIT_FAILURE


def _parse_value(text: str):
    value = yaml.safe_load(text.strip())
    if isinstance(value, str):
        # YAML 1.1 reads 2e12 as a string
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"sweep value '{text}' is not a number") from None
    return value


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s')

    if args.list_policies:
        print_policy_list()
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_INVALID_CONFIG

    try:
        sections = load_sections(args)
        system = dataclass_from_dict(SystemConfig, sections['system'])
        plan = build_plan(args, sections)

        if args.command == 'train':
            return cmd_train(args, sections, system, plan)
        if args.command == 'eval':
            return cmd_eval(args, sections, system, plan)
        if args.command == 'sweep':
            return cmd_sweep(args, sections, system, plan)
        if args.command == 'compare':
            return cmd_compare(args, sections, system, plan)
        if args.command == 'verify':
            return cmd_verify(args, args.suite, plan)
        if args.command == 'verify-rce':
            return cmd_verify(args, list(RCE_SUITES), plan)
        return cmd_verify(args, ['gradients'], plan)

    except (ConfigError, PolicyNotFoundError, ScenarioError, CheckpointError) as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_INVALID_CONFIG
    except TrainingHaltedError as e:
        logger.error("Training halted: %s", e)
        return EXIT_FAILURE


if __name__ == '__main__':
    sys.exit(main())
