# test_service_model.py - Sensing, generation, queueing, rate and CAQA

import sys
import os
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from src.config import SystemConfig
from src.scenario_providers import Scenario, UserScenario, draw_scenario
from src.service_model import (
    Allocation,
    InfeasibleTargetError,
    InvalidAllocationError,
    aeg,
    caqa,
    content_accuracy,
    display_energy,
    evaluate,
    generation_time,
    inverse_sensing_accuracy,
    sensing_accuracy,
    sensing_cycles,
    timeline,
    transmission_rate,
)


def make_scenario(gains, omega_min):
    users = [
        UserScenario(user_id=i, distance_m=100.0, gain_g=g, log_gain_h=0.0, omega_min=w, priority_rank=i + 1)
        for i, (g, w) in enumerate(zip(gains, omega_min))
    ]
    return Scenario(users=tuple(users))


# ============================================
# EXACT IDENTITIES
# ============================================

def test_parameter_table_identities(system):
    assert aeg(system.z_min, system) == 0.03
    assert generation_time(10, system) == 0.1
    assert system.subchannel_bandwidth == 1e7
    assert system.display_bits == 6291456
    print("✓ eps(z_min) = 0.03, T_gen(10) = 0.1 s, B/K = 10 MHz, beta D_c = 6,291,456 bits")


# ============================================
# SENSING
# ============================================

def test_sensing_cycles(system):
    assert sensing_cycles(0.0, system) == 0.0
    assert sensing_cycles(0.06, system) == pytest.approx(1000.0)
    assert sensing_cycles(system.e_s_max, system) == pytest.approx(1666.6667, rel=1e-6)


def test_sensing_accuracy(system):
    assert sensing_accuracy(0.0, system) == 0.0
    assert sensing_accuracy(1.0, system) == 0.0
    assert sensing_accuracy(1000.0, system) == pytest.approx(0.95 - 2 * 1000 ** -0.6, abs=1e-15)
    assert sensing_accuracy(1000.0, system) == pytest.approx(0.9183, abs=1e-4)
    assert sensing_accuracy(1e12, system) == pytest.approx(system.xi, abs=1e-6)


def test_inverse_sensing_accuracy(system, rng):
    steep = SystemConfig(varpi=0.5)
    assert inverse_sensing_accuracy(steep.xi - steep.varpi, steep) == pytest.approx(1.0)
    assert inverse_sensing_accuracy(0.0, system) == 0.0
    assert inverse_sensing_accuracy(-0.3, system) == 0.0

    with pytest.raises(InfeasibleTargetError):
        inverse_sensing_accuracy(system.xi, system)
    with pytest.raises(InfeasibleTargetError):
        inverse_sensing_accuracy([0.5, 0.99], system)

    targets = rng.uniform(0.01, system.xi - 1e-3, 100)
    back = sensing_accuracy(inverse_sensing_accuracy(targets, system), system)
    assert np.max(np.abs(back - targets)) < 1e-9
    print("✓ Upsilon^-1 round trip within 1e-9")


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=5.0, max_value=1e6), st.floats(min_value=1.001, max_value=100.0))
def test_sensing_accuracy_monotone(n, factor):
    config = SystemConfig()
    assert sensing_accuracy(n * factor, config) >= sensing_accuracy(n, config)


# ============================================
# GENERATION AND QUEUE
# ============================================

def test_generation_error_and_time(system):
    assert aeg(10, system) == pytest.approx(0.03 * math.exp(-1.0), rel=1e-12)
    assert aeg(10, system) == pytest.approx(0.011036, abs=1e-6)
    assert aeg(200, system) < 1e-18
    with pytest.raises(InvalidAllocationError):
        aeg(4, system)

    assert generation_time(5, SystemConfig(server_capacity=16e12)) == 0.0625
    assert generation_time(0, system) == 0.0


def test_timeline_single_user(system):
    one = SystemConfig(num_users=1)
    times = timeline([0.01], [10], one)
    assert times.t_que[0] == 0.0
    assert times.t_wait[0] == 0.0


def test_timeline_two_users_queue(system):
    config = SystemConfig(num_users=2)
    times = timeline([0.02, 0.003], [10, 5], config)
    # user 1 sensed at 0.02 s, generates until 0.12 s; user 2 arrives at 0.023 s
    assert times.t_arr[1] == pytest.approx(0.023)
    assert times.t_que[1] == pytest.approx(0.12 - 0.023)
    assert times.t_que[1] > 0
    assert np.all(times.t_wait == 0.0)

    # service intervals do not overlap and keep the sensing order
    start = times.t_arr + times.t_que
    end = start + times.t_gen
    assert start[1] >= end[0] - 1e-15


def test_timeline_fast_server_has_no_queue():
    config = SystemConfig(num_users=6, server_capacity=1e30)
    times = timeline(np.full(6, 0.01), np.full(6, 5), config)
    assert np.all(times.t_que == 0.0)
    assert np.all(times.t_que >= 0) and np.all(times.t_wait >= 0)


# ============================================
# COMMUNICATION AND CAQA
# ============================================

def test_transmission_rate_link_budget(system):
    g = 10 ** -9.05
    snr = g * system.p_c * system.num_users / (system.noise_psd * system.bandwidth_hz)
    assert snr == pytest.approx(3.36e4, rel=2e-3)
    assert transmission_rate(g, system) == pytest.approx(1.50e8, rel=3e-3)
    assert transmission_rate(1e-30, system) < 1e-3
    assert display_energy(g, system) == pytest.approx(1.5 * 6291456 / transmission_rate(g, system))
    assert display_energy(g, system) == pytest.approx(0.0629, rel=5e-3)


def test_caqa_saturation_and_zero(system):
    g = 10 ** -9.05
    theta, x, omega = caqa(0.05, 8, 0.0, g, system)
    assert omega == 0.0 and x == 0.0
    theta, x, omega = caqa(0.05, 8, 10 * display_energy(g, system), g, system)
    assert omega == theta
    assert x > system.display_capacity
    # x beta = C T_c before the display cap
    e_c = 0.01
    _, x, _ = caqa(0.05, 8, e_c, g, system)
    assert x * system.bits_per_pixel == pytest.approx(transmission_rate(g, system) * e_c / system.p_c, rel=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(min_value=0.0, max_value=0.1), st.floats(min_value=0.0, max_value=0.1), st.integers(5, 10),
       st.integers(5, 10))
def test_content_accuracy_monotone(e1, e2, z1, z2):
    config = SystemConfig()
    lo_e, hi_e = sorted((e1, e2))
    lo_z, hi_z = sorted((z1, z2))
    assert content_accuracy(hi_e, lo_z, config) >= content_accuracy(lo_e, lo_z, config)
    assert content_accuracy(lo_e, hi_z, config) >= content_accuracy(lo_e, lo_z, config)
    assert 0 <= content_accuracy(hi_e, hi_z, config) < 1


# ============================================
# EVALUATE
# ============================================

def test_all_zero_allocation(system, rng):
    scenario = draw_scenario(system, rng)
    outcome = evaluate(scenario, Allocation.zeros(system.num_users), system)
    assert outcome.avg_caqa == 0.0
    assert outcome.num_violators == system.num_users
    assert not outcome.c4.any()
    assert np.all(outcome.eps == system.eps_fwd)


def test_hand_built_two_user_instance():
    config = SystemConfig(num_users=2)
    gains = [1e-9, 3e-10]
    scenario = make_scenario(gains, [0.42, 0.44])
    allocation = Allocation(e_s=[0.02, 0.05], z=[7, 9], e_c=[0.03, 0.08])
    outcome = evaluate(scenario, allocation, config)

    # independent recomputation with scalar math
    expected_omega = []
    for g, e_s, z, e_c in zip(gains, [0.02, 0.05], [7, 9], [0.03, 0.08]):
        n = e_s / (6e-5 * 1.0)
        upsilon = max(0.95 - 2.0 * n ** -0.6, 0.0)
        eps = 0.03 * math.exp(-0.2 * (z - 5))
        theta = (1 - eps) * upsilon
        rate = 1e8 / 2 * math.log2(1 + g * 1.5 * 2 / (10 ** -20.4 * 1e8))
        x = rate * (e_c / 1.5) / 24
        expected_omega.append(theta * min(x / 262144, 1.0))

    np.testing.assert_allclose(outcome.omega, expected_omega, rtol=0, atol=1e-9)
    np.testing.assert_allclose(outcome.t_que, [0.0, 0.02], atol=1e-12)
    np.testing.assert_allclose(outcome.t_total, [0.09 + 0.02, 0.18 + 0.08 / 1.5], atol=1e-12)
    assert outcome.avg_caqa == pytest.approx(np.mean(expected_omega), abs=1e-9)
    print(f"✓ K=2 instance matches scalar recomputation (AvgCAQA {outcome.avg_caqa:.6f})")


def test_time_accounting_and_flags(system, rng):
    scenario = draw_scenario(system, rng)
    allocation = Allocation(e_s=rng.uniform(0, 0.1, 10), z=rng.integers(5, 11, 10), e_c=rng.uniform(0, 0.05, 10))
    o = evaluate(scenario, allocation, system)
    assert np.array_equal(o.t_total, o.t_arr + o.t_que + o.t_gen + o.t_wait + o.t_c)
    assert np.all(o.t_que >= 0) and np.all(o.t_wait >= 0)
    assert np.all(o.quality <= 1.0)
    np.testing.assert_allclose(o.omega, o.theta * o.quality, rtol=1e-15)
    assert o.c2 == (allocation.total_energy <= system.e_max + 1e-12)

    frame = o.to_frame()
    assert len(frame) == 10 and 'omega' in frame.columns


def test_energy_overspend_flags_c2(system, rng):
    scenario = draw_scenario(system, rng)
    allocation = Allocation(e_s=np.full(10, 0.05), z=np.full(10, 7), e_c=np.full(10, 0.05 + 1e-9))
    assert not evaluate(scenario, allocation, system).c2


def test_feasible_allocation_bounds(system, rng):
    scenario = draw_scenario(system, rng)
    allocation = Allocation(e_s=np.full(10, 0.05), z=np.full(10, 8), e_c=np.full(10, 0.04))
    outcome = evaluate(scenario, allocation, system)
    if outcome.feasible:
        assert scenario.omega_min.min() <= outcome.avg_caqa <= 1.0


def test_allocation_validation(system, rng):
    with pytest.raises(InvalidAllocationError):
        Allocation(e_s=[-0.1], z=[5], e_c=[0.0])
    with pytest.raises(InvalidAllocationError):
        Allocation(e_s=[0.1], z=[5.5], e_c=[0.0])
    with pytest.raises(InvalidAllocationError):
        Allocation(e_s=[0.1, 0.1], z=[5], e_c=[0.0])
    with pytest.raises(InvalidAllocationError):
        evaluate(draw_scenario(system, rng), Allocation.zeros(3), system)


if __name__ == '__main__':
    sys.exit(pytest.main([__file__, '-v']))
