import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecodrive.errors import ContractViolation, ValidationError
from ecodrive.gap import (GapConfig, follower_constraint_ok, gap_at, gap_feasible, gap_update, safe_distance,
                          target_position_at)
from ecodrive.predictor.forecast import TargetForecast, constant_velocity_forecast


def random_profile(rng, n_steps=None):
    """Piecewise-constant ego/target profile over spatial steps.

    Step k lasts ``ticks[k]`` forecast periods; the ego covers ``dd`` at
    constant speed and the target holds ``vt[k]`` for the same interval.
    """
    n = int(n_steps or rng.integers(1, 30))
    period = float(rng.choice([0.1, 0.25, 0.5, 1.0]))
    dd = float(rng.uniform(1.0, 20.0))
    ticks = rng.integers(1, 12, size=n)
    vt = rng.uniform(0.0, 25.0, size=n)
    samples = np.repeat(vt, ticks)
    start = float(rng.uniform(0.0, 1000.0))
    fc = TargetForecast.from_velocities(start, samples, period)
    return fc, dd, ticks * period, vt, float(rng.uniform(0.0, 200.0))


def recursion_vs_closed_form(rng) -> float:
    """Largest |recursion - gap_at| over one random profile, in metres."""
    fc, dd, durations, vt, g0 = random_profile(rng)
    gap, t, worst = g0, fc.start_time, 0.0
    for k, (dur, v_l) in enumerate(zip(durations, vt)):
        gap = gap_update(gap, v_l, dd / dur, dd)
        t += dur
        worst = max(worst, abs(gap - gap_at(g0, fc, (k + 1) * dd, t)))
    return worst


# ------------------------------------------------------------------ recursion

def test_equal_speeds_keep_gap():
    assert gap_update(37.5, 12.0, 12.0, 10.0) == 37.5


def test_recursion_substitution():
    assert gap_update(50.0, 10.0, 20.0, 10.0) == 45.0


@settings(max_examples=200, deadline=None)
@given(g=st.floats(0.0, 300.0), vl=st.floats(0.0, 30.0), ve=st.floats(0.1, 30.0), dd=st.floats(0.5, 20.0))
def test_recursion_sign(g, vl, ve, dd):
    change = gap_update(g, vl, ve, dd) - g
    if vl > ve * (1 + 1e-12):
        assert change > 0
    elif vl < ve * (1 - 1e-12):
        assert change < 0


def test_recursion_needs_moving_ego():
    with pytest.raises(ContractViolation):
        gap_update(10.0, 5.0, 0.0, 10.0)


def test_recursion_matches_closed_form_on_random_profiles():
    rng = np.random.default_rng(0)
    assert max(recursion_vs_closed_form(rng) for _ in range(200)) <= 1e-9


# ------------------------------------------------------------------ closed form

def test_constant_forecast_position():
    fc = constant_velocity_forecast(10.0, 5.0, start_time=4.0)
    assert target_position_at(fc, 7.0) == pytest.approx(30.0)
    assert target_position_at(fc, 4.0) == 0.0


def test_held_sample_convention():
    fc = TargetForecast.from_velocities(0.0, [10.0, 20.0])
    assert target_position_at(fc, 1.5) == pytest.approx(10.0 + 0.5 * 20.0)


def test_hold_past_horizon():
    fc = TargetForecast.from_velocities(0.0, [4.0, 6.0])
    assert target_position_at(fc, 5.0) == pytest.approx(10.0 + 6.0 * 3.0)


def test_query_before_start():
    fc = constant_velocity_forecast(3.0, 5.0, start_time=10.0)
    with pytest.raises(ContractViolation):
        target_position_at(fc, 9.0)


def test_both_stationary_keeps_gap():
    fc = constant_velocity_forecast(0.0, 5.0)
    assert gap_at(42.0, fc, 0.0, 100.0) == 42.0


def test_gap_closes_by_travel_difference():
    fc = constant_velocity_forecast(8.0, 20.0)
    assert gap_at(60.0, fc, 100.0, 10.0) == pytest.approx(60.0 - 20.0)


def test_reference_time_shift():
    fc = TargetForecast.from_velocities(0.0, [2.0, 4.0, 6.0])
    assert gap_at(10.0, fc, 5.0, 2.5, t_ref=1.0) == pytest.approx(10.0 + (4.0 + 3.0) - 5.0)


# ------------------------------------------------------------------ safe distance

def test_standstill_safe_distance():
    assert safe_distance(GapConfig(), 0.0, 0.0) == 2.0


def test_safe_distance_substitution():
    assert safe_distance(GapConfig(d0=2.0, t_gap=1.5), 10.0, 0.0) == pytest.approx(17.0)


def test_safe_distance_closing_term():
    cfg = GapConfig()
    expect = 2.0 + 10.0 * 1.5 + 10.0 * 4.0 / (2.0 * math.sqrt(6.0))
    assert safe_distance(cfg, 10.0, 4.0) == pytest.approx(expect, rel=1e-15)


def test_safe_distance_floor():
    assert safe_distance(GapConfig(), 10.0, -100.0) == 2.0


@settings(max_examples=200, deadline=None)
@given(v1=st.floats(0.0, 40.0), v2=st.floats(0.0, 40.0), dv=st.floats(0.0, 20.0))
def test_safe_distance_monotone(v1, v2, dv):
    cfg = GapConfig()
    lo, hi = sorted((v1, v2))
    assert cfg.d0 <= safe_distance(cfg, lo, dv) <= safe_distance(cfg, hi, dv)


def test_safe_distance_rejects_negative_speed():
    with pytest.raises(ContractViolation):
        safe_distance(GapConfig(), -1.0, 0.0)


# ------------------------------------------------------------------ feasibility

def test_beyond_radar_is_outside_interval():
    cfg = GapConfig(d_radar=250.0)
    assert gap_feasible(cfg, 260.0, 10.0) is False
    assert follower_constraint_ok(cfg, 260.0, 10.0) is True


def test_interval_is_closed():
    cfg = GapConfig(d_radar=250.0)
    assert gap_feasible(cfg, 12.5, 12.5) is True
    assert gap_feasible(cfg, 250.0, 12.5) is True
    assert gap_feasible(cfg, 12.4, 12.5) is False
    assert follower_constraint_ok(cfg, 12.4, 12.5) is False


@pytest.mark.parametrize("kwargs", [dict(d0=0.0), dict(t_gap=-1.0), dict(b_max=0.0), dict(d_radar=1.0)])
def test_gap_config_invariants(kwargs):
    with pytest.raises(ValidationError):
        GapConfig(**kwargs)
