import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecodrive.errors import SchemaError, ValidationError
from ecodrive.route_world import (DriverParams, Intersection, RouteSpec, SpatSchedule, TargetTrajectory,
                                  gen_target_trajectory, green_windows, load_route, load_trajectory_csv,
                                  random_route, route_to_dict, save_route, save_trajectory_csv)


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


# ------------------------------------------------------------------ route files

def test_shipped_route_has_five_lights_and_two_stop_signs(configs_dir):
    route = load_route(configs_dir / "route19_analog.json")
    assert len(route.intersections) == 5
    assert len(route.stop_signs) == 2
    assert route.length == pytest.approx(7000.0)


def test_minimal_route_without_intersections(tmp_path):
    p = _write(tmp_path, "r.json", json.dumps({"length": 100, "speed_limits": [{"start": 0, "max": 15}]}))
    route = load_route(p)
    assert route.n_steps == 10
    assert route.intersections == ()
    assert route.grade_at(50.0) == 0.0


def test_green_end_beyond_cycle_is_rejected(tmp_path):
    doc = {"length": 100, "speed_limits": [{"start": 0, "max": 15}],
           "intersections": [{"position": 50, "spat": {"cycle_time": 60, "green_start": 0, "green_end": 70}}]}
    with pytest.raises(ValidationError) as err:
        load_route(_write(tmp_path, "r.json", json.dumps(doc)))
    assert "green_end" in str(err.value)


def test_syntax_error_reports_line(tmp_path):
    p = _write(tmp_path, "r.json", '{\n "length": 100,\n "speed_limits": [\n}')
    with pytest.raises(SchemaError) as err:
        load_route(p)
    assert err.value.line is not None


def test_missing_field_is_named(tmp_path):
    p = _write(tmp_path, "r.json", json.dumps({"speed_limits": [{"start": 0, "max": 15}]}))
    with pytest.raises(SchemaError) as err:
        load_route(p)
    assert err.value.field == "length"


@pytest.mark.parametrize("kwargs, field", [
    (dict(length=0.0), "length"),
    (dict(distance_step=-1.0), "distance_step"),
    (dict(speed_limits=((0.0, 10.0, 5.0),)), "speed_limits"),
    (dict(intersections=(Intersection(300.0, SpatSchedule(60, 0, 30)), Intersection(200.0, SpatSchedule(60, 0, 30)))),
     "intersections"),
    (dict(intersections=(Intersection(600.0, SpatSchedule(60, 0, 30)),)), "intersections"),
])
def test_route_invariants(kwargs, field):
    base = dict(length=500.0, distance_step=10.0)
    base.update(kwargs)
    with pytest.raises(ValidationError) as err:
        RouteSpec(**base)
    assert err.value.field == field


def test_route_round_trip(tmp_path, configs_dir):
    route = load_route(configs_dir / "route19_analog.json")
    save_route(route, tmp_path / "copy.json")
    again = load_route(tmp_path / "copy.json")
    assert route_to_dict(again) == route_to_dict(route)


# ------------------------------------------------------------------ signal windows

def test_green_windows_unrolls_schedule(light_route):
    assert green_windows(light_route, 0, (0.0, 120.0)) == [(0.0, 30.0), (60.0, 90.0)]


def test_green_windows_inside_red_is_empty(light_route):
    assert green_windows(light_route, 0, (35.0, 55.0)) == []


def test_always_green_returns_full_horizon():
    route = RouteSpec(100.0, 10.0, intersections=(Intersection(50.0, SpatSchedule(60.0, 0.0, 60.0, 13.0)),))
    assert green_windows(route, 0, (7.0, 250.0)) == [(7.0, 250.0)]


def test_green_windows_bad_index(light_route):
    with pytest.raises(IndexError):
        green_windows(light_route, 3, (0.0, 10.0))


@settings(max_examples=200, deadline=None)
@given(cycle=st.floats(10.0, 120.0), frac=st.tuples(st.floats(0.0, 1.0), st.floats(0.0, 1.0)),
       offset=st.floats(-500.0, 500.0), t0=st.floats(-1000.0, 1000.0))
def test_green_measure_over_one_cycle(cycle, frac, offset, t0):
    a, b = sorted(frac)
    if (b - a) * cycle < 1e-6:
        return
    spat = SpatSchedule(cycle, a * cycle, b * cycle, offset)
    wins = spat.windows(t0, t0 + cycle)
    total = sum(hi - lo for lo, hi in wins)
    assert total == pytest.approx(spat.green_end - spat.green_start, abs=1e-6)
    for (l0, h0), (l1, h1) in zip(wins, wins[1:]):
        assert h0 <= l1
    mids = [0.5 * (lo + hi) for lo, hi in wins]
    assert all(spat.is_green(m) for m in mids)


# ------------------------------------------------------------------ trajectories

def test_csv_two_rows_trapezoid(tmp_path):
    traj = load_trajectory_csv(_write(tmp_path, "t.csv", "t,v\n0,10\n1,12\n"))
    np.testing.assert_allclose(traj.a, [2.0, 2.0])
    np.testing.assert_allclose(traj.position, [0.0, 11.0])


def test_csv_constant_speed(tmp_path):
    rows = "\n".join(f"{t},5" for t in range(11))
    traj = load_trajectory_csv(_write(tmp_path, "t.csv", "t,v\n" + rows + "\n"))
    assert traj.position[-1] == pytest.approx(50.0)
    assert np.all(traj.a == 0.0)


def test_csv_negative_velocity(tmp_path):
    with pytest.raises(ValidationError):
        load_trajectory_csv(_write(tmp_path, "t.csv", "t,v\n0,1\n1,-1\n"))


def test_csv_non_monotone_time(tmp_path):
    with pytest.raises(SchemaError) as err:
        load_trajectory_csv(_write(tmp_path, "t.csv", "t,v\n0,1\n2,1\n1,1\n"))
    assert err.value.line == 4


def test_csv_resamples_to_one_hertz(tmp_path):
    traj = load_trajectory_csv(_write(tmp_path, "t.csv", "t,v\n0,0\n0.5,1\n2,4\n"))
    np.testing.assert_allclose(traj.t, [0.0, 1.0, 2.0])
    np.testing.assert_allclose(traj.v, [0.0, 2.0, 4.0])


def test_csv_round_trip(tmp_path, flat_route):
    traj = gen_target_trajectory(flat_route, 0.0, None, 60.0, seed=3)
    save_trajectory_csv(traj, tmp_path / "t.csv")
    again = load_trajectory_csv(tmp_path / "t.csv")
    np.testing.assert_array_equal(again.v, traj.v)
    np.testing.assert_allclose(again.position, traj.position, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 30.0), min_size=2, max_size=40))
def test_from_velocity_satisfies_invariants(vs):
    traj = TargetTrajectory.from_velocity(3.0, vs)
    step = np.diff(traj.position) - 0.5 * (traj.v[1:] + traj.v[:-1])
    assert np.all(np.abs(step) <= 1e-6)
    assert np.all(np.diff(traj.position) >= 0)


def test_position_at_matches_samples_and_holds_past_end():
    traj = TargetTrajectory.from_velocity(0.0, [0.0, 2.0, 2.0])
    np.testing.assert_allclose(traj.position_at(traj.t), traj.position)
    assert traj.position_at(0.5) == pytest.approx(0.25)     # integral of 2t over [0, 0.5]
    assert traj.position_at(5.0) == pytest.approx(3.0 + 2.0 * 3.0)


# ------------------------------------------------------------------ generated drivers

def test_free_road_reaches_speed_limit():
    route = RouteSpec(length=5000.0, distance_step=10.0, speed_limits=((0.0, 0.0, 15.0),))
    p = DriverParams(speed_factor=1.0, speed_factor_spread=0.0, speed_noise=0.0, accel_noise=0.0)
    traj = gen_target_trajectory(route, 0.0, p, 120.0, seed=0)
    assert traj.v[-1] == pytest.approx(15.0, abs=0.05)
    assert np.all(traj.v <= 15.0 + 1e-9)


def test_held_red_forces_stop_before_the_bar():
    route = RouteSpec(length=1000.0, distance_step=10.0, speed_limits=((0.0, 0.0, 15.0),),
                      intersections=(Intersection(200.0, SpatSchedule(1000.0, 900.0, 1000.0)),))
    traj = gen_target_trajectory(route, 0.0, None, 120.0, seed=5)
    assert traj.v[-1] == 0.0
    assert traj.position[-1] < 200.0


def test_stop_sign_is_served():
    route = RouteSpec(length=1000.0, distance_step=10.0, speed_limits=((0.0, 0.0, 15.0),), stop_signs=(300.0,))
    traj = gen_target_trajectory(route, 0.0, None, 150.0, seed=9)
    near = np.abs(traj.position - 300.0) < 2.5
    assert np.any(near & (traj.v == 0.0))
    assert traj.position[-1] > 300.0


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_generated_trajectories_obey_limits(seed):
    route = random_route(seed)
    traj = gen_target_trajectory(route, float(seed * 17), None, 600.0, seed=seed)
    _, vmax = route.speed_limit_at(traj.position)
    assert np.all(traj.v <= vmax + 1e-9)
    assert np.all(np.diff(traj.position) >= 0)


def test_generation_is_deterministic():
    route = random_route(4)
    a = gen_target_trajectory(route, 10.0, None, 300.0, seed=42)
    b = gen_target_trajectory(route, 10.0, None, 300.0, seed=42)
    assert a.v.tobytes() == b.v.tobytes()
    assert a.position.tobytes() == b.position.tobytes()


def test_generation_rejects_nonpositive_duration(flat_route):
    with pytest.raises(ValueError):
        gen_target_trajectory(flat_route, 0.0, None, 0.0, seed=0)
