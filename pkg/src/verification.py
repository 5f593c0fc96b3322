"""
Verification Suites - Oracles and Invariant Checks

Independent checks of the analytic model and the solvers:
- RCE against a grid brute force (dynamic programme over budget buckets)
- RCE against an external LP solver (scipy HiGHS), when installed
- RCE safety properties, exchange certificate and O(K log K) scaling
- closed-form FCFS timing against an event-driven simpy simulation
- finite-difference gradient checks of every agent network
- action filter guarantees and exact model identities

Each suite returns a SuiteResult; ``run_verification`` bundles them into a
VerificationReport used by the ``verify`` commands.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import simpy

from .allocation_engine import action_filter
from .comra_rce import ComraInstance, comra_objective, greedy_exchange_check, rce_allocate
from .config import SystemConfig
from .neural_core import GradCheckResult, gradient_check, near_relu_kink, relative_error
from .sac_agent import AgentConfig, SACAgent
from .service_model import aeg, content_accuracy, generation_time, sensing_cycles, timeline

logger = logging.getLogger(__name__)


@dataclass
class SuiteResult:
    """Outcome of one verification suite."""
    name: str
    passed: bool
    cases: int
    failures: int = 0
    max_deviation: float = 0.0
    runtime_s: float = 0.0
    details: Dict[str, float] = field(default_factory=dict)


@dataclass
class VerificationReport:
    suites: List[SuiteResult]

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.suites)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([
            {'suite': s.name, 'passed': s.passed, 'cases': s.cases, 'failures': s.failures,
             'max_deviation': s.max_deviation, 'runtime_s': s.runtime_s}
            for s in self.suites
        ])

    def print(self) -> None:
        print("\n" + "=" * 80)
        print("VERIFICATION REPORT")
        print("=" * 80)
        print(f"{'Suite':<28} {'Result':<8} {'Cases':<8} {'Fail':<6} {'Max dev':<12} {'Time s':<8}")
        print("-" * 80)
        for s in self.suites:
            status = 'PASS' if s.passed else 'FAIL'
            print(f"{s.name:<28} {status:<8} {s.cases:<8} {s.failures:<6} {s.max_deviation:<12.3e} {s.runtime_s:<8.2f}")
        print("=" * 80)
        print(f"Overall: {'PASS' if self.passed else 'FAIL'}\n")


# ============================================
# RANDOM INSTANCES
# ============================================

def random_comra_instance(num_users: int, rng: np.random.Generator, lp_regime: bool = True) -> ComraInstance:
    """
    Synthetic communication sub-problem with realistic magnitudes.

    Lambda ~ U(2, 20) CAQA/J, Theta ~ U(0.5, 0.95), floors from
    Omega_min ~ U(0.4, 0.45), ceilings between the floor and the display
    bound Theta / Lambda. With ``lp_regime`` every user is eligible and the
    budget covers all floors; otherwise some users are made ineligible and
    the budget may fall short of the floors.
    """
    k = num_users
    lam = rng.uniform(2.0, 20.0, k)
    theta = rng.uniform(0.5, 0.95, k)
    omega_min = rng.uniform(0.4, 0.45, k)
    e_min = omega_min / lam
    display = theta / lam
    e_max = e_min + rng.uniform(0.0, 1.0, k) * (display - e_min)

    if lp_regime:
        e_r = rng.uniform(e_min.sum(), 1.1 * e_max.sum())
    else:
        broken = rng.random(k) < 0.15
        e_max = np.where(broken, e_min * rng.uniform(0.0, 0.99, k), e_max)
        e_r = rng.uniform(-0.1, 1.1) * e_max.sum()

    gain = np.full(k, np.nan)
    return ComraInstance(theta=theta, gain=gain, omega_min=omega_min, e_min=e_min, e_max_comm=e_max,
                         lam=lam, e_r=float(e_r))


def brute_force_comra(instance: ComraInstance, levels: int = 400, resolution: int = 4000) -> float:
    """
    Best objective over per-user grids {0} U linspace(E_min, E_max_comm, levels).

    Dynamic programme over the budget split into ``resolution`` buckets.
    Option costs are rounded up to whole buckets, so every combination the
    programme accepts is feasible; the result is within one bucket per user
    of the exact grid optimum and never above it.
    """
    budget = max(instance.e_r, 0.0)
    if budget == 0.0:
        return 0.0
    unit = budget / resolution

    best = np.full(resolution + 1, -np.inf)
    best[0] = 0.0
    for k in range(instance.num_users):
        if instance.eligible[k]:
            options = np.concatenate([[0.0], np.linspace(instance.e_min[k], instance.e_max_comm[k], levels)])
        else:
            options = np.zeros(1)
        gains = np.minimum(instance.lam[k] * options, instance.theta[k])
        buckets = np.ceil(options / unit).astype(np.int64)

        folded = np.full_like(best, -np.inf)
        for cost, gain in zip(buckets, gains):
            if cost > resolution:
                continue
            shifted = best[:resolution + 1 - cost] + gain
            np.maximum(folded[cost:], shifted, out=folded[cost:])
        best = folded

    return float(best.max() / instance.num_users)


def grid_increment(instance: ComraInstance, levels: int = 400) -> float:
    """Objective change of one grid cell for the steepest user."""
    span = np.where(instance.eligible, instance.e_max_comm - instance.e_min, 0.0)
    return float(np.max(instance.lam * span) / (levels - 1) / instance.num_users)


def lp_oracle(instance: ComraInstance) -> Optional[float]:
    """
    Objective of the box-constrained LP via scipy HiGHS dual simplex.

    Only meaningful when every user is eligible and E_r >= sum(E_min).
    Returns None when scipy is not installed or the solve fails.
    """
    try:
        from scipy.optimize import linprog
    except ImportError:
        logger.warning("scipy not installed; skipping LP oracle")
        return None

    k = instance.num_users
    res = linprog(
        c=-instance.lam,
        A_ub=np.ones((1, k)),
        b_ub=[instance.e_r],
        bounds=list(zip(instance.e_min, instance.e_max_comm)),
        method='highs-ds',
    )
    if not res.success:
        return None
    return float(-res.fun / k)


# ============================================
# RCE SUITES
# ============================================

def rce_optimality_suite(instances: int = 500, seed: int = 0, sizes: Sequence[int] = (2, 3, 4, 5),
                         levels: int = 400) -> SuiteResult:
    """RCE objective >= grid brute force minus one grid increment, plus the exchange certificate."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    failures = 0
    worst = 0.0
    for _ in range(instances):
        instance = random_comra_instance(int(rng.choice(sizes)), rng, lp_regime=True)
        e_c = rce_allocate(instance)
        rce_value = comra_objective(instance, e_c)
        bf_value = brute_force_comra(instance, levels)
        shortfall = bf_value - rce_value
        worst = max(worst, shortfall)
        if shortfall > grid_increment(instance, levels) + 1e-12 or not greedy_exchange_check(instance, e_c):
            failures += 1

    return SuiteResult(
        name='rce_optimality', passed=failures == 0, cases=instances, failures=failures,
        max_deviation=worst, runtime_s=time.perf_counter() - start,
    )


def rce_safety_suite(instances: int = 1000, seed: int = 1) -> SuiteResult:
    """Budget safety, box respect, monotonicity in E_r and the exchange certificate over all regimes."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    failures = 0
    worst = 0.0
    for _ in range(instances):
        instance = random_comra_instance(int(rng.integers(1, 11)), rng, lp_regime=False)
        e_c = rce_allocate(instance)
        funded = e_c > 0

        overspend = e_c.sum() - max(instance.e_r, 0.0)
        worst = max(worst, overspend)
        ok = overspend <= 1e-12
        ok &= bool(np.all(e_c[funded] >= instance.e_min[funded] - 1e-15))
        ok &= bool(np.all(e_c[funded] <= instance.e_max_comm[funded] + 1e-15))
        ok &= bool(np.all(instance.eligible[funded]))
        ok &= greedy_exchange_check(instance, e_c)

        richer = ComraInstance(**{**instance.__dict__, 'e_r': instance.e_r + abs(rng.normal(0, 0.05))})
        ok &= comra_objective(richer, rce_allocate(richer)) >= comra_objective(instance, e_c) - 1e-12
        failures += not ok

    return SuiteResult(name='rce_safety', passed=failures == 0, cases=instances, failures=failures,
                       max_deviation=max(worst, 0.0), runtime_s=time.perf_counter() - start)


def lp_oracle_suite(instances: int = 200, seed: int = 2, tolerance: float = 1e-9) -> SuiteResult:
    """RCE vs an external LP solver on the all-eligible, budget-covers-floors regime."""
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    failures = 0
    worst = 0.0
    solved = 0
    for _ in range(instances):
        instance = random_comra_instance(int(rng.integers(2, 11)), rng, lp_regime=True)
        reference = lp_oracle(instance)
        if reference is None:
            continue
        solved += 1
        deviation = abs(comra_objective(instance, rce_allocate(instance)) - reference)
        worst = max(worst, deviation)
        failures += deviation > tolerance

    return SuiteResult(name='rce_lp_oracle', passed=failures == 0, cases=solved, failures=failures,
                       max_deviation=worst, runtime_s=time.perf_counter() - start)


def rce_complexity_benchmark(small: int = 10 ** 4, large: int = 10 ** 5, repeats: int = 7,
                             seed: int = 3, max_ratio: float = 15.0) -> SuiteResult:
    """Median runtime ratio between K=large and K=small instances."""
    rng = np.random.default_rng(seed)

    def median_runtime(k: int) -> float:
        times = []
        for _ in range(repeats):
            instance = random_comra_instance(k, rng, lp_regime=True)
            t0 = time.perf_counter()
            rce_allocate(instance)
            times.append(time.perf_counter() - t0)
        return float(np.median(times))

    median_runtime(small)  # warm-up
    t_small, t_large = median_runtime(small), median_runtime(large)
    ratio = t_large / max(t_small, 1e-9)
    return SuiteResult(
        name='rce_complexity', passed=ratio < max_ratio, cases=2 * repeats, failures=int(ratio >= max_ratio),
        max_deviation=ratio, runtime_s=t_small * repeats + t_large * repeats,
        details={'median_small_s': t_small, 'median_large_s': t_large},
    )


# ============================================
# FCFS ORACLE
# ============================================

def simulate_fcfs(e_s, z, config: SystemConfig) -> Tuple[np.ndarray, np.ndarray]:
    """
    Event-driven single-server generation queue.

    Each task arrives when its sensing ends, waits for the server (FIFO),
    is generated for T_gen, and then waits until the last user is sensed.

    Returns:
        (queueing times, waiting times)
    """
    e_s = np.asarray(e_s, dtype=np.float64)
    arrivals = np.cumsum(sensing_cycles(e_s, config) * config.t_s)
    service = generation_time(z, config)
    k = arrivals.size
    started = np.zeros(k)
    finished = np.zeros(k)

    env = simpy.Environment()
    server = simpy.Resource(env, capacity=1)

    def task(i: int):
        yield env.timeout(arrivals[i])
        with server.request() as request:
            yield request
            started[i] = env.now
            yield env.timeout(service[i])
            finished[i] = env.now

    for i in range(k):
        env.process(task(i))
    env.run()

    last_arrival = arrivals[-1] if k else 0.0
    return started - arrivals, np.maximum(last_arrival - finished, 0.0)


def fcfs_oracle_suite(instances: int = 1000, seed: int = 4, tolerance: float = 1e-9) -> SuiteResult:
    """Closed-form queue and wait times vs the simpy simulation on random K <= 6 instances."""
    rng = np.random.default_rng(seed)
    base = SystemConfig()
    start = time.perf_counter()
    failures = 0
    worst = 0.0
    for _ in range(instances):
        k = int(rng.integers(1, 7))
        config = base.with_overrides(num_users=k, server_capacity=float(rng.choice([2e12, 8e12, 20e12, 200e12])))
        e_s = rng.uniform(0.0, config.e_s_max, k)
        z = rng.integers(config.z_min, config.z_max + 1, k)
        closed = timeline(e_s, z, config)
        t_que, t_wait = simulate_fcfs(e_s, z, config)
        deviation = max(np.max(np.abs(closed.t_que - t_que)), np.max(np.abs(closed.t_wait - t_wait)))
        worst = max(worst, float(deviation))
        failures += deviation > tolerance

    return SuiteResult(name='fcfs_oracle', passed=failures == 0, cases=instances, failures=failures,
                       max_deviation=worst, runtime_s=time.perf_counter() - start)


# ============================================
# GRADIENTS
# ============================================

def actor_gradient_check(agent: SACAgent, rng: np.random.Generator, points: int = 200, h: float = 1e-5,
                         tolerance: float = 1e-4, kink_margin: float = 1e-4) -> GradCheckResult:
    """
    Finite differences through the whole actor with frozen noise.

    The sampled one-hots are held fixed (no straight-through term), which
    is the exact derivative of the sampled computation.
    """
    actor = agent.actor
    nets = list(actor.networks.values())
    thetas = [net.params.flat() for net in nets]
    sizes = [t.size for t in thetas]
    worst = 0.0

    def set_all(flat: np.ndarray):
        offset = 0
        for net, size in zip(nets, sizes):
            net.params.set_flat(flat[offset:offset + size])
            offset += size

    def unstable(out) -> bool:
        c = out.caches
        if any(near_relu_kink(net.spec, c[name], kink_margin) for name, net in actor.networks.items()):
            return True
        ls = c['raw_ls']
        edge = min(np.min(np.abs(ls - agent.config.log_std_min)), np.min(np.abs(ls - agent.config.log_std_max)))
        return edge < kink_margin

    theta = np.concatenate(thetas)
    for _ in range(points):
        for _attempt in range(100):
            state = rng.standard_normal((1, agent.state_dim))
            out = agent.actor_forward(state, 'sample')
            if not unstable(out):
                break
        w_action = rng.standard_normal(out.action.shape)
        w_logp = rng.standard_normal(1)
        grads = actor.backward(out, w_action, w_logp, straight_through=False)
        analytic_grad = np.concatenate([np.concatenate([g.ravel() for g in grads[name]])
                                        for name in actor.networks])

        direction = rng.standard_normal(theta.size)
        direction /= np.linalg.norm(direction)
        analytic = float(analytic_grad @ direction)

        def loss(sign: float) -> float:
            set_all(theta + sign * h * direction)
            o = agent.actor_forward(state, 'sample', noise=out.noise)
            return float((w_action * o.action).sum() + (w_logp * o.log_prob).sum())

        numeric = (loss(1.0) - loss(-1.0)) / (2 * h)
        set_all(theta)
        worst = max(worst, relative_error(analytic, numeric))

    return GradCheckResult(name='actor_composite', points=points, max_rel_error=worst, tolerance=tolerance)


def gradient_suite(system: Optional[SystemConfig] = None, agent_config: Optional[AgentConfig] = None,
                   points: int = 200, seed: int = 5) -> SuiteResult:
    """Finite-difference checks of every network the agent uses, plus the composite actor."""
    system = system or SystemConfig()
    agent_config = agent_config or AgentConfig()
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    agent = SACAgent(system, agent_config, np.random.default_rng(seed + 1))

    results: List[GradCheckResult] = []
    for name, net in agent.actor.networks.items():
        results.append(gradient_check(net, rng, points=points, name=f'actor.{name}'))
    results.append(gradient_check(agent.critics[0], rng, points=points, name='critic'))
    results.append(actor_gradient_check(agent, rng, points=points))

    failures = sum(not r.passed for r in results)
    return SuiteResult(
        name='gradients', passed=failures == 0, cases=len(results) * points, failures=failures,
        max_deviation=max(r.max_rel_error for r in results), runtime_s=time.perf_counter() - start,
        details={r.name: r.max_rel_error for r in results},
    )


# ============================================
# MODEL SUITES
# ============================================

def action_filter_suite(samples: int = 100000, seed: int = 6, system: Optional[SystemConfig] = None) -> SuiteResult:
    """
    Filtered actions always satisfy C3/C4; unflagged floors meet Omega_min at full display.
    """
    config = system or SystemConfig()
    rng = np.random.default_rng(seed)
    start = time.perf_counter()

    d = rng.random(samples)
    z = rng.integers(config.z_min, config.z_max + 1, samples)
    low, high = config.omega_min_range
    omega_min = rng.uniform(low, high, samples)
    filtered = action_filter(d, z, omega_min, config)

    c3 = (filtered.e_s >= 0) & (filtered.e_s <= config.e_s_max)
    c4 = (z >= config.z_min) & (z <= config.z_max)

    ok = ~filtered.flagged
    # at full display resolution Omega equals Theta
    omega = content_accuracy(filtered.e_q[ok], z[ok], config)
    deviation = float(np.max(np.abs(omega - omega_min[ok]))) if ok.any() else 0.0

    failures = int(np.sum(~(c3 & c4))) + int(deviation > 1e-6)
    return SuiteResult(
        name='action_filter', passed=failures == 0, cases=samples, failures=failures,
        max_deviation=deviation, runtime_s=time.perf_counter() - start,
        details={'flagged': int(filtered.flagged.sum())},
    )


def model_identity_suite(config: Optional[SystemConfig] = None) -> SuiteResult:
    """Exact arithmetic identities of the default parameter table."""
    config = config or SystemConfig()
    checks = {
        'aeg_at_z_min': float(aeg(config.z_min, config)) == config.eps_fwd,
        'generation_time_z10': float(generation_time(10, config)) == 0.1,
        'subchannel_bandwidth': config.subchannel_bandwidth == 1e7,
        'display_bits': config.display_bits == 6291456,
    }
    failures = sum(not v for v in checks.values())
    return SuiteResult(name='model_identities', passed=failures == 0, cases=len(checks), failures=failures,
                       details={k: float(v) for k, v in checks.items()})


# ============================================
# ENTRY POINTS
# ============================================

SUITES: Dict[str, Callable[..., SuiteResult]] = {
    'model_identities': model_identity_suite,
    'fcfs_oracle': fcfs_oracle_suite,
    'rce_optimality': rce_optimality_suite,
    'rce_safety': rce_safety_suite,
    'rce_lp_oracle': lp_oracle_suite,
    'rce_complexity': rce_complexity_benchmark,
    'action_filter': action_filter_suite,
    'gradients': gradient_suite,
}

RCE_SUITES = ('rce_optimality', 'rce_safety', 'rce_lp_oracle', 'rce_complexity')


def run_verification(suites: Optional[Sequence[str]] = None, seed: int = 0) -> VerificationReport:
    """
    Run the named suites (all by default), each seeded from ``seed``.

    Raises:
        KeyError: On an unknown suite name
    """
    names = list(suites) if suites else list(SUITES)
    results = []
    for offset, name in enumerate(names):
        if name not in SUITES:
            raise KeyError(f"unknown suite '{name}'; available: {', '.join(SUITES)}")
        logger.info("Running suite %s", name)
        func = SUITES[name]
        result = func() if name == 'model_identities' else func(seed=seed + offset)
        logger.info("Suite %s: %s (max deviation %.3e)", name, 'PASS' if result.passed else 'FAIL',
                    result.max_deviation)
        results.append(result)
    return VerificationReport(results)
