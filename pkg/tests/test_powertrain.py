import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecodrive.errors import InfeasibleTransition, PowerLimitError, SchemaError, ValidationError
from ecodrive.powertrain import (G, Battery, ControlInput, Curve, FuelMap, VehicleState, battery_current,
                                 default_plant, fuel_rate, load_plant, plant_to_dict, save_plant, soc_transition,
                                 stage_cost, step, stop_control, torque_limits, vehicle_transition)


def torque_for_accel(p, v, a, grade=0.0):
    """Crank torque giving net acceleration ``a`` at speed ``v`` (hand-derived force balance)."""
    resist = p.drag_area_coeff * v * v + p.mass * G * (p.rolling_coeff * math.cos(grade) + math.sin(grade))
    return (p.mass * a + resist) * p.wheel_radius / p.driveline_ratio(v)


# ------------------------------------------------------------------ limits

def test_torque_limits_at_standstill(plant):
    lim = torque_limits(plant, 0.0)
    assert lim["t_eng"] == (0.0, plant.engine.torque_max(0.0))


@pytest.mark.parametrize("v", [0.0, 3.0, 11.0, 19.5, 29.0])
def test_bsg_is_bidirectional(plant, v):
    lo, hi = torque_limits(plant, v)["t_bsg"]
    assert lo < 0.0 < hi


def test_limits_clamp_beyond_curve(plant):
    assert torque_limits(plant, 100.0)["t_eng"][1] == plant.engine.torque_max.y[-1]
    assert torque_limits(plant, 100.0)["t_bsg"][1] == plant.bsg.torque_max.y[-1]


def test_negative_speed_rejected(plant):
    with pytest.raises(ValueError):
        torque_limits(plant, -1.0)


def test_min_curve_above_max_rejected(plant):
    bad = replace(plant.bsg, torque_min=Curve((0, 30), (60.0, 60.0)))
    with pytest.raises(ValidationError):
        replace(plant, bsg=bad)


# ------------------------------------------------------------------ kinematics

def test_spatial_kinematics_identity(plant):
    u = ControlInput(torque_for_accel(plant, 10.0, 1.0), 0.0)
    res = step(plant, VehicleState(10.0, 0.5, 0.0), u, 10.5)
    assert res.accel == pytest.approx(1.0, rel=1e-12)
    assert res.state.v == pytest.approx(11.0, rel=1e-12)
    assert res.dt == pytest.approx(1.0, rel=1e-12)
    assert res.state.t == pytest.approx(1.0, rel=1e-12)


def test_zero_net_force_keeps_speed(plant):
    u = ControlInput(torque_for_accel(plant, 8.0, 0.0), 0.0)
    s = vehicle_transition(plant, VehicleState(8.0, 0.5, 2.0), u, 10.0)
    assert s.v == pytest.approx(8.0, rel=1e-12)
    assert s.t == pytest.approx(2.0 + 10.0 / 8.0, rel=1e-12)


def test_overbraking_is_infeasible(plant):
    u = ControlInput(plant.engine.torque_min(3.0), plant.bsg.torque_min(3.0))
    with pytest.raises(InfeasibleTransition):
        step(plant, VehicleState(3.0, 0.5), u, 10.0)


def test_standstill_without_traction_is_infeasible(plant):
    with pytest.raises(InfeasibleTransition):
        step(plant, VehicleState(0.0, 0.5), ControlInput(0.0, 0.0), 10.0)


@settings(max_examples=100, deadline=None)
@given(v=st.floats(2.0, 18.0), a=st.floats(-1.5, 1.5), d1=st.floats(1.0, 20.0), d2=st.floats(1.0, 20.0))
def test_constant_acceleration_composes(v, a, d1, d2):
    """Two steps under the same acceleration equal one step over the sum (time additivity).

    The gear is held per step, so the oracle uses a constant-ratio plant
    with zero drag, where constant torque means constant acceleration.
    """
    p = default_plant()
    p = replace(p, drag_area_coeff=0.0, driveline_ratio=Curve((0.0,), (8.0,)))
    te = torque_for_accel(p, v, a)
    s0 = VehicleState(v, 0.5, 0.0)
    if v * v + 2 * a * (d1 + d2) <= 0.5:
        return
    one = step(p, s0, ControlInput(te, 0.0), d1 + d2)
    mid = step(p, s0, ControlInput(te, 0.0), d1)
    two = step(p, mid.state, ControlInput(te, 0.0), d2)
    assert two.state.v == pytest.approx(one.state.v, rel=1e-9)
    assert two.state.t == pytest.approx(one.state.t, rel=1e-9)


# ------------------------------------------------------------------ battery

def test_open_circuit_keeps_soc(plant):
    assert soc_transition(plant, 0.6, 0.0, 5.0) == 0.6


def test_quadratic_current_oracle(plant):
    p = replace(plant, battery=Battery(28800.0, 48.0, 0.05))
    i_small = (48.0 - math.sqrt(48.0 ** 2 - 4 * 0.05 * 1000.0)) / (2 * 0.05)
    assert float(battery_current(p, 1000.0)) == pytest.approx(i_small, rel=1e-12)
    assert i_small == pytest.approx(21.31, abs=5e-3)
    soc = soc_transition(p, 0.5, 1000.0, 2.0)
    assert soc == pytest.approx(0.5 - i_small * 2.0 / 28800.0, rel=1e-12)


def test_regen_raises_soc(plant):
    assert soc_transition(plant, 0.5, -1000.0, 1.0) > 0.5


def test_power_limit(plant):
    b = plant.battery
    too_much = b.open_circuit_voltage ** 2 / (4 * b.internal_resistance) + 1.0
    with pytest.raises(PowerLimitError):
        soc_transition(plant, 0.5, too_much, 1.0)


def test_soc_transition_does_not_clamp(plant):
    assert soc_transition(plant, 0.0001, 2000.0, 10.0) < 0.0


@settings(max_examples=100, deadline=None)
@given(v=st.floats(1.0, 19.0), frac=st.floats(0.05, 1.0), dd=st.floats(1.0, 20.0))
def test_energy_sign_consistency(plant, v, frac, dd):
    lo, hi = torque_limits(plant, v)["t_bsg"]
    te = torque_for_accel(plant, v, 0.0)
    assist = step(plant, VehicleState(v, 0.5), ControlInput(te - frac * hi, frac * hi), dd)
    regen = step(plant, VehicleState(v, 0.5), ControlInput(te - frac * lo, frac * lo), dd)
    assert assist.state.soc < 0.5
    assert regen.state.soc > 0.5


# ------------------------------------------------------------------ fuel

def test_start_stop_burns_nothing(plant):
    assert fuel_rate(plant, 0.0, 0.0) == 0.0
    assert fuel_rate(plant, 12.0, -80.0) == 0.0


def test_fuel_map_identity_at_nodes(plant):
    fm = plant.engine.fuel_map
    for i in (0, 3, len(fm.speed) - 1):
        for j in (1, 4, len(fm.torque) - 1):
            assert fm(fm.speed[i], fm.torque[j]) == pytest.approx(fm.rate[i][j], abs=1e-15)


def test_fuel_bilinear_between_rows(plant):
    fm = plant.engine.fuel_map
    w = fm.speed[4]
    lo, hi = fm.rate[4][2], fm.rate[4][3]
    mid = fm(w, 0.5 * (fm.torque[2] + fm.torque[3]))
    assert lo <= mid <= hi
    assert mid == pytest.approx(0.5 * (lo + hi), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(v=st.floats(0.0, 40.0), te=st.floats(-500.0, 400.0))
def test_fuel_rate_non_negative(plant, v, te):
    assert fuel_rate(plant, v, te) >= 0.0


def test_fuel_map_rejects_negative_rates():
    with pytest.raises(ValidationError):
        FuelMap((1.0, 2.0), (0.0, 1.0), ((0.0, -1.0), (0.0, 1.0)))


def test_fuel_map_rejects_decreasing_torque_rows():
    with pytest.raises(ValidationError):
        FuelMap((1.0, 2.0), (0.0, 1.0), ((2.0, 1.0), (0.0, 1.0)))


# ------------------------------------------------------------------ stage cost

def test_stage_cost_endpoints(plant):
    s, u = VehicleState(10.0, 0.5), ControlInput(60.0, 0.0)
    res = step(plant, s, u, 10.0)
    assert stage_cost(plant, s, u, 10.0, 1.0) == pytest.approx(res.fuel_rate * res.dt, rel=1e-15)
    assert stage_cost(plant, s, u, 10.0, 0.0) == pytest.approx(res.dt, rel=1e-15)


def test_stage_cost_weighting(plant):
    s, u = VehicleState(10.0, 0.5), ControlInput(60.0, 0.0)
    res = step(plant, s, u, 10.0)
    expect = (0.5 * res.fuel_rate + 0.5) * res.dt
    assert stage_cost(plant, s, u, 10.0, 0.5) == pytest.approx(expect, rel=1e-15)


def test_stage_cost_gamma_range(plant):
    with pytest.raises(ValueError):
        stage_cost(plant, VehicleState(10.0, 0.5), ControlInput(0.0, 0.0), 10.0, 1.5)


# ------------------------------------------------------------------ exact stop

@pytest.mark.parametrize("v", [2.0, 5.0, 9.0])
def test_stop_control_lands_at_zero(plant, v):
    te, tb, ok = stop_control(plant, v, 10.0)
    assert bool(ok)
    res = step(plant, VehicleState(v, 0.5), ControlInput(float(te), float(tb)), 10.0)
    assert res.state.v == 0.0
    assert res.dt == pytest.approx(20.0 / v, rel=1e-9)


# ------------------------------------------------------------------ files

def test_shipped_plant_equals_default(configs_dir):
    assert plant_to_dict(load_plant(configs_dir / "plant_default.json")) == plant_to_dict(default_plant())


def test_plant_round_trip(tmp_path, plant):
    save_plant(plant, tmp_path / "p.json")
    assert plant_to_dict(load_plant(tmp_path / "p.json")) == plant_to_dict(plant)


def test_plant_missing_field(tmp_path, plant):
    doc = plant_to_dict(plant)
    del doc["battery"]["capacity"]
    import json
    (tmp_path / "p.json").write_text(json.dumps(doc))
    with pytest.raises(SchemaError) as err:
        load_plant(tmp_path / "p.json")
    assert err.value.field == "battery.capacity"
