# test_comra_rce.py - Ranking-based communication energy allocation

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.comra_rce import (
    ComraInstance,
    build_instance,
    comra_objective,
    greedy_exchange_check,
    max_comm_energy,
    min_comm_energy,
    priority_metric,
    rce_allocate,
)
from src.scenario_providers import draw_scenario
from src.service_model import Allocation, caqa, content_accuracy, display_energy, evaluate, timeline
from src.verification import brute_force_comra, grid_increment, lp_oracle, random_comra_instance


def three_user_instance(e_r: float) -> ComraInstance:
    return ComraInstance(
        theta=np.array([0.8, 0.9, 0.7]),
        gain=np.full(3, np.nan),
        omega_min=np.array([0.42, 0.42, 0.42]),
        e_min=np.array([0.05, 0.04, 0.06]),
        e_max_comm=np.array([0.10, 0.08, 0.09]),
        lam=np.array([10.0, 20.0, 5.0]),
        e_r=e_r,
    )


# ============================================
# HAND-WORKED INSTANCES
# ============================================

def test_pours_remainder_in_lambda_order():
    e_c = rce_allocate(three_user_instance(0.25))
    np.testing.assert_allclose(e_c, [0.10, 0.08, 0.07], atol=1e-15)
    assert e_c.sum() <= 0.25 + 1e-15
    assert greedy_exchange_check(three_user_instance(0.25), e_c, check_budget_slack=True)
    print("✓ Floors funded, remainder poured user 2 -> 1 -> 3")


def test_budget_beyond_ceilings_leaves_slack():
    instance = three_user_instance(1.0)
    e_c = rce_allocate(instance)
    np.testing.assert_allclose(e_c, instance.e_max_comm)


def test_budget_short_funds_floors_in_rank_order():
    e_c = rce_allocate(three_user_instance(0.10))
    np.testing.assert_allclose(e_c, [0.05, 0.04, 0.0])


def test_no_budget_or_no_eligible_user():
    assert not rce_allocate(three_user_instance(0.0)).any()
    assert not rce_allocate(three_user_instance(-0.3)).any()

    instance = three_user_instance(0.5)
    instance.e_min = np.full(3, np.inf)
    assert not rce_allocate(instance).any()


def test_ineligible_user_gets_nothing():
    instance = three_user_instance(0.5)
    instance.e_max_comm = np.array([0.10, 0.03, 0.09])
    e_c = rce_allocate(instance)
    assert e_c[1] == 0.0
    np.testing.assert_allclose(e_c[[0, 2]], [0.10, 0.09])


def test_ties_break_on_index():
    instance = three_user_instance(0.17)
    instance.lam = np.array([10.0, 10.0, 10.0])
    instance.e_min = np.array([0.05, 0.05, 0.05])
    instance.e_max_comm = np.array([0.08, 0.08, 0.08])
    e_c = rce_allocate(instance)
    np.testing.assert_allclose(e_c, [0.07, 0.05, 0.05])


def test_exchange_check_detects_bad_split():
    instance = three_user_instance(0.25)
    bad = np.array([0.10, 0.05, 0.09])
    assert bad.sum() <= 0.25
    assert not greedy_exchange_check(instance, bad)
    assert greedy_exchange_check(instance, np.zeros(3))


# ============================================
# FLOORS AND PRIORITIES FROM THE SERVICE MODEL
# ============================================

def test_floor_meets_requirement_exactly(system, rng):
    scenario = draw_scenario(system, rng)
    theta = content_accuracy(np.full(10, 0.06), np.full(10, 8), system)
    floors = min_comm_energy(theta, scenario.gains, scenario.omega_min, system)
    lam = priority_metric(theta, scenario.gains, system)
    reachable = np.isfinite(floors)
    omega = np.minimum(lam * floors, theta)
    np.testing.assert_allclose(omega[reachable], scenario.omega_min[reachable], rtol=1e-12)


def test_unreachable_requirement_has_infinite_floor(system):
    floors = min_comm_energy([0.0, 0.3, 0.9], [1e-9] * 3, [0.42, 0.42, 0.42], system)
    assert np.isinf(floors[0]) and np.isinf(floors[1])
    assert floors[2] == pytest.approx(0.42 / 0.9 * display_energy(1e-9, system))


def test_ceiling_is_smaller_of_time_and_display_bounds(small_system, rng):
    scenario = draw_scenario(small_system, rng)
    times = timeline(np.full(3, 0.05), np.full(3, 8), small_system)
    ceilings = max_comm_energy(times, scenario.gains, small_system)
    time_bound = small_system.p_c * (small_system.t_max - times.comm_start)
    np.testing.assert_allclose(ceilings, np.minimum(time_bound, display_energy(scenario.gains, small_system)))

    late = small_system.with_overrides(t_max=1e-3)
    assert not max_comm_energy(timeline(np.full(3, 0.05), np.full(3, 8), late), scenario.gains, late).any()


def test_rce_allocation_satisfies_service_constraints(system, rng):
    for _ in range(20):
        scenario = draw_scenario(system, rng)
        e_s = np.full(10, 0.05)
        z = np.full(10, 8)
        instance = build_instance(scenario, e_s, z, system)
        e_c = rce_allocate(instance)
        outcome = evaluate(scenario, Allocation(e_s=e_s, z=z, e_c=e_c), system)
        assert outcome.c2 and outcome.c1.all() and outcome.c6.all()
        funded = e_c > 0
        assert outcome.c5[funded].all()
        assert comra_objective(instance, e_c) == pytest.approx(outcome.avg_caqa, rel=1e-9, abs=1e-12)


def test_perfect_accuracy_instance_ranks_on_channel(system, rng):
    scenario = draw_scenario(system, rng)
    instance = build_instance(scenario, np.zeros(10), np.full(10, 5), system, assume_perfect_accuracy=True)
    assert np.all(instance.theta == 1.0)
    assert np.array_equal(np.argsort(-instance.lam, kind='stable'), np.argsort(-scenario.gains, kind='stable'))


def test_priority_is_marginal_gain_per_joule(rng):
    instance = random_comra_instance(6, rng)
    e_c = 0.5 * (instance.e_min + instance.e_max_comm)
    h = 1e-7
    for k in range(instance.num_users):
        step = np.zeros(6)
        step[k] = h
        slope = (comra_objective(instance, e_c + step) - comra_objective(instance, e_c - step)) / (2 * h)
        assert slope * instance.num_users == pytest.approx(instance.lam[k], rel=1e-6)


def test_priority_matches_service_model_slope(system, rng):
    scenario = draw_scenario(system, rng)
    e_s, z = np.full(10, 0.06), np.full(10, 8)
    theta = content_accuracy(e_s, z, system)
    lam = priority_metric(theta, scenario.gains, system)
    # below the display cap CAQA is linear in E_c
    e_c = 0.5 * display_energy(scenario.gains, system)
    h = 1e-6 * e_c
    _, _, up = caqa(e_s, z, e_c + h, scenario.gains, system)
    _, _, down = caqa(e_s, z, e_c - h, scenario.gains, system)
    np.testing.assert_allclose((up - down) / (2 * h), lam, rtol=1e-6)


# ============================================
# ORACLES
# ============================================

def test_matches_lp_oracle():
    pytest.importorskip('scipy')
    rng = np.random.default_rng(7)
    for _ in range(50):
        instance = random_comra_instance(int(rng.integers(2, 12)), rng)
        e_c = rce_allocate(instance)
        assert comra_objective(instance, e_c) == pytest.approx(lp_oracle(instance), abs=1e-9)


def test_not_beaten_by_brute_force():
    rng = np.random.default_rng(8)
    for _ in range(20):
        instance = random_comra_instance(int(rng.integers(2, 5)), rng)
        ours = comra_objective(instance, rce_allocate(instance))
        assert brute_force_comra(instance, levels=60, resolution=600) <= ours + grid_increment(instance, 60) + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2 ** 31 - 1), st.booleans())
def test_safety_properties(num_users, seed, lp_regime):
    instance = random_comra_instance(num_users, np.random.default_rng(seed), lp_regime=lp_regime)
    e_c = rce_allocate(instance)
    assert e_c.sum() <= max(instance.e_r, 0.0) + 1e-12
    funded = e_c > 0
    assert np.all(instance.eligible[funded])
    assert np.all(e_c[funded] >= instance.e_min[funded] - 1e-15)
    assert np.all(e_c[funded] <= instance.e_max_comm[funded] + 1e-15)
    assert greedy_exchange_check(instance, e_c)


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
