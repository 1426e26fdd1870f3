"""Scenario configs, the closed loop, reports, comparison tables and the command line."""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

from conftest import CONFIGS
from small_configs import write_small_configs
from ecodrive.errors import SchemaError, ValidationError
from ecodrive.gap import GapConfig
from ecodrive.harness.cli import EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_OK, EXIT_SAFETY, main
from ecodrive.harness.compare import ROW_COLUMNS, compare, load_compare_spec
from ecodrive.harness.config import SolverConfig, dumps, load_scenario
from ecodrive.harness.report import emit_report, read_json, read_trace_csv, summary_path
from ecodrive.harness.simulate import (TRACE_COLUMNS, ScenarioReport, braking_bound, creep_step, long_term_rollout,
                                       long_term_table, local_soc_axis, simulate)
from ecodrive.ocp.grid import ControlGrid
from ecodrive.powertrain import VehicleState
from ecodrive.route_world import RouteSpec, TargetTrajectory, load_route, save_trajectory_csv


@pytest.fixture(scope="module")
def small(tmp_path_factory):
    return write_small_configs(tmp_path_factory.mktemp("small"))


@pytest.fixture(scope="module")
def small_report(small):
    return simulate(load_scenario(small["scenario"]))


def _write(path, doc):
    path.write_text(json.dumps(doc))
    return path


# ------------------------------------------------------------------ configs

@pytest.mark.parametrize("name", [f"scenario_{i}.json" for i in range(1, 6)] + ["empty_road.json"])
def test_shipped_scenarios_load(name):
    cfg = load_scenario(CONFIGS / name)
    assert cfg.route.is_file() and cfg.plant.is_file()
    assert cfg.predictor in ("gru", "constant")


def test_shipped_compare_spec_loads():
    spec = load_compare_spec(CONFIGS / "compare_default.json")
    assert len(spec.scenarios) == 5
    assert spec.predictors == ("gru", "constant")


def test_missing_route_key_is_schema_error(small, tmp_path):
    doc = json.loads(small["scenario"].read_text())
    doc.pop("route")
    with pytest.raises(SchemaError, match="route"):
        load_scenario(_write(tmp_path / "s.json", doc))


def test_unknown_solver_key_is_schema_error(small, tmp_path):
    doc = json.loads(small["scenario"].read_text())
    doc["solver"] = {"horizn": 3}
    with pytest.raises(SchemaError):
        load_scenario(_write(tmp_path / "s.json", doc))


def test_missing_file_is_validation_error(small, tmp_path):
    doc = json.loads(small["scenario"].read_text())
    doc["route"] = str(tmp_path / "nope.json")
    with pytest.raises(ValidationError, match="route"):
        load_scenario(_write(tmp_path / "s.json", doc))


def test_gru_without_model_rejected(small, tmp_path):
    doc = json.loads(small["scenario"].read_text())
    doc.pop("model")
    doc["predictor"] = "gru"
    with pytest.raises(ValidationError, match="model"):
        load_scenario(_write(tmp_path / "s.json", doc))


@pytest.mark.parametrize("bad", [{"gamma": 1.5}, {"horizon": 0}, {"replan_stride": 0}, {"t_step": 0.0},
                                 {"t_span_first": 500.0}, {"on_infeasible": "ignore"}, {"soc_window": -0.1}])
def test_solver_config_validation(bad):
    with pytest.raises(ValidationError):
        SolverConfig.from_dict(bad)


def test_gap_config_validation():
    with pytest.raises(ValidationError):
        GapConfig(d_radar=1.0)
    with pytest.raises(ValidationError):
        GapConfig(t_gap=0.0)


def test_overrides(small):
    cfg = load_scenario(small["scenario"])
    out = cfg.with_overrides(predictor="constant", seed=99)
    assert out.predictor == "constant" and out.target.seed == 99
    assert cfg.predictor == "gru" and cfg.target.seed == 3


def test_dumps_is_canonical():
    assert dumps({"b": 1, "a": 0.1}) == dumps({"a": 0.1, "b": 1})
    assert json.loads(dumps({"x": 0.1 + 0.2}))["x"] == 0.1 + 0.2


# ------------------------------------------------------------------ helpers of the loop

def test_local_soc_axis(plant):
    solver = SolverConfig()
    for soc in (0.3, 0.31, 0.55, 0.557, 0.79, 0.8):
        axis = local_soc_axis(soc, solver, plant)
        assert axis[0] <= soc <= axis[-1]
        assert axis[0] >= plant.battery.soc_min - 1e-12 and axis[-1] <= plant.battery.soc_max + 1e-12
        np.testing.assert_allclose(np.diff(axis), solver.soc_step_local)
        assert axis[-1] - axis[0] <= 2 * solver.soc_window + 2 * solver.soc_step_local + 1e-12


def test_braking_bound_never_exceeds_exact_travel():
    fc = braking_bound(12.0, -2.0, 5.0)
    for tau in (0.05, 0.5, 3.0, 5.9, 6.0, 15.0):
        exact = 12.0 * min(tau, 6.0) - 0.5 * 2.0 * min(tau, 6.0) ** 2
        assert fc.offset_at(5.0 + tau) <= exact + 1e-9
    assert fc.velocity_at(5.0 + 10.0) == 0.0


def test_braking_bound_holds_speed_when_not_braking():
    fc = braking_bound(8.0, 1.0, 0.0)
    assert fc.offset_at(10.0) == pytest.approx(80.0)


def test_creep_step_ends_at_rest_one_step_on(plant, flat_route):
    c = creep_step(plant, flat_route, 3, VehicleState(0.0, 0.55, 7.0), ControlGrid(n_eng=7, n_bsg=3))
    assert c is not None
    assert c.state.v == 0.0 and c.state.t == pytest.approx(7.0 + c.dt)
    assert c.dt > 0 and c.fuel_rate >= 0


def test_long_term_rollout_stops_at_stop_sign(plant):
    route = RouteSpec(300.0, 10.0, speed_limits=((0.0, 0.0, 14.0),), stop_signs=(150.0,), name="r")
    solver = SolverConfig(v_max=15.0, soc_step=0.02, controls=ControlGrid(n_eng=9, n_bsg=3))
    table = long_term_table(route, plant, solver, 0.55)
    rep = long_term_rollout(route, plant, table, solver.controls, solver.gamma, 0.55)
    assert len(rep.trace) == route.n_steps
    assert [r["v_ego"] for r in rep.trace if r["node"] == 15] == [0.0]
    assert rep.fuel_consumed == pytest.approx(math.fsum(r["fuel"] for r in rep.trace))
    assert rep.travel_time == pytest.approx(math.fsum(r["dt"] for r in rep.trace))


# ------------------------------------------------------------------ closed loop

def test_closed_loop_reaches_the_end_safely(small, small_report):
    rep = small_report
    route = load_route(small["route"])
    assert rep.trace[-1]["position"] == route.length
    assert rep.violations == []
    assert rep.lights_total == 1 and rep.lights_on_green == 1
    assert rep.fuel_consumed == pytest.approx(math.fsum(r["fuel"] for r in rep.trace))
    assert rep.travel_time == pytest.approx(math.fsum(r["dt"] for r in rep.trace))
    assert rep.final_soc == rep.trace[-1]["soc"]


def test_closed_loop_trace_invariants(small_report):
    prev_pos, prev_t = 0.0, -math.inf
    for row in small_report.trace:
        step = row["position"] - prev_pos
        assert step == (0.0 if row["event"] == "wait" else 10.0)
        assert row["t"] > prev_t
        assert row["gap"] >= row["d_safe"] or row["gap"] > 250.0
        prev_pos, prev_t = row["position"], row["t"]
    at_stop = [r for r in small_report.trace if r["position"] == 600.0 and r["event"] != "wait"]
    assert at_stop and at_stop[0]["v_ego"] == 0.0


def test_closed_loop_without_target(small):
    rep = simulate(load_scenario(small["free"]))
    assert rep.predictor == "none"
    assert rep.violations == []
    assert all(math.isnan(r["gap"]) for r in rep.trace)


# ------------------------------------------------------------------ reports

def test_report_csv_round_trip(small_report, tmp_path):
    paths = emit_report(small_report, "csv", tmp_path / "trace.csv")
    assert paths == [tmp_path / "trace.csv", tmp_path / "trace.summary.json"]
    rows = read_trace_csv(paths[0])
    assert len(rows) == len(small_report.trace)
    for got, want in zip(rows, small_report.trace):
        for c in TRACE_COLUMNS:
            assert got[c] == want[c] or (isinstance(want[c], float) and math.isnan(want[c]) and math.isnan(got[c]))
    side = read_json(paths[1])
    assert set(side) == {"summary", "violations"}
    assert side["summary"]["fuel_consumed"] == small_report.fuel_consumed


def test_report_json_document(small_report, tmp_path):
    emit_report(small_report, "json", tmp_path / "r.json")
    doc = read_json(tmp_path / "r.json")
    assert set(doc) == {"summary", "violations", "trace"}
    assert set(doc["trace"][0]) == set(TRACE_COLUMNS)
    assert set(doc["summary"]) >= {"fuel_consumed", "travel_time", "final_soc", "lights_on_green", "status"}


def test_empty_report_writes_header_only(tmp_path):
    rep = ScenarioReport("x", "constant", 0.0, 0.0, 0.55, 0.55, [], [], 0, 0)
    emit_report(rep, "csv", tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == ",".join(TRACE_COLUMNS) + "\n"


def test_non_finite_values_become_null(tmp_path):
    rep = ScenarioReport("x", "constant", math.inf, math.nan, 0.55, 0.55, [], [], 0, 0)
    emit_report(rep, "json", tmp_path / "n.json")
    doc = read_json(tmp_path / "n.json")
    assert doc["summary"]["fuel_consumed"] is None and doc["summary"]["travel_time"] is None


def test_bad_format_rejected(small_report, tmp_path):
    with pytest.raises(ValueError):
        emit_report(small_report, "xml", tmp_path / "r.xml")


def test_summary_path():
    assert summary_path("out/run.csv").name == "run.summary.json"


# ------------------------------------------------------------------ comparison

def test_compare_is_deterministic_and_tabulated(small):
    spec = load_compare_spec(small["compare"])
    a, b = compare(spec.scenarios, None, spec.predictors), compare(spec.scenarios, None, spec.predictors)
    assert a.rows == b.rows
    assert [r["predictor"] for r in a.rows] == ["gru", "constant"]
    assert all(set(ROW_COLUMNS) <= set(r) for r in a.rows)
    assert a.complete and a.safety_violations() == 0
    for variant in ("gru", "constant"):
        row = next(r for r in a.rows if r["predictor"] == variant)
        assert a.means[variant]["fuel_consumed"] == row["fuel_consumed"]
    ref, other = a.means["gru"]["fuel_consumed"], a.means["constant"]["fuel_consumed"]
    assert a.deltas["constant"]["fuel_consumed"] == pytest.approx(100 * (other - ref) / ref)


def test_compare_seed_override(small):
    spec = load_compare_spec(small["compare"])
    table = compare(spec.scenarios, (5, 6), ("constant",))
    assert [r["seed"] for r in table.rows] == [5, 6]


def test_compare_rejects_empty_seeds(small):
    with pytest.raises(ValidationError):
        compare(load_compare_spec(small["compare"]).scenarios, (), ("constant",))


# ------------------------------------------------------------------ command line

def _run(cmd, config, out, *extra):
    return main([cmd, "--config", str(config), "--out", str(out), *extra])


@pytest.mark.parametrize("cmd,cfg", [("gen-traffic", "scenario"), ("train", "predictor"),
                                     ("eval-predictor", "predictor"), ("solve-long-term", "free"),
                                     ("simulate", "free")])
@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_cli_subcommands_succeed(small, tmp_path, cmd, cfg, fmt):
    out = tmp_path / f"out.{fmt}"
    assert _run(cmd, small[cfg], out, "--format", fmt) == EXIT_OK
    assert out.stat().st_size > 0
    if fmt == "json" and cmd != "train":
        read_json(out)


def test_cli_gen_traffic_csv_loads_back(small, tmp_path):
    from ecodrive.route_world import load_trajectory_csv
    assert _run("gen-traffic", small["scenario"], tmp_path / "t.csv", "--seed", "4") == EXIT_OK
    traj = load_trajectory_csv(tmp_path / "t.csv")
    assert traj.duration == pytest.approx(300.0, abs=1.0)


def test_cli_train_writes_loadable_model(small, tmp_path):
    from ecodrive.predictor.gru import load_model
    assert _run("train", small["predictor"], tmp_path / "m.json") == EXIT_OK
    model = load_model(tmp_path / "m.json")
    assert model.T_h == 5 and model.T_p == 5
    assert "best_epoch" in read_json(tmp_path / "m.summary.json")


def test_cli_missing_config_exit_code(tmp_path):
    assert _run("simulate", tmp_path / "nope.json", tmp_path / "o.csv") == EXIT_CONFIG


def test_cli_schema_error_exit_code(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert _run("simulate", path, tmp_path / "o.csv") == EXIT_CONFIG
    assert _run("compare", _write(tmp_path / "c.json", {"scenarios": []}), tmp_path / "o.csv") == EXIT_CONFIG
    assert _run("train", _write(tmp_path / "p.json", {"T_h": 5, "bogus": 1}), tmp_path / "o.json") == EXIT_CONFIG


def test_cli_bad_arguments_exit_two(small, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--config", str(small["free"]), "--out", str(tmp_path / "o"), "--format", "xml"])
    assert exc.value.code == 2


def test_cli_infeasible_exit_code(small, tmp_path):
    # a minimum speed of 12 m/s cannot be regained within one step after the stop sign
    route = json.loads(small["route"].read_text())
    route["speed_limits"] = [{"start": 0.0, "min": 12.0, "max": 14.0}]
    _write(tmp_path / "route.json", route)
    doc = json.loads(small["free"].read_text())
    doc["route"] = str(tmp_path / "route.json")
    cfg = _write(tmp_path / "s.json", doc)
    assert _run("solve-long-term", cfg, tmp_path / "o.csv") == EXIT_INFEASIBLE
    assert _run("simulate", cfg, tmp_path / "o.csv") == EXIT_INFEASIBLE


def test_cli_safety_violation_exit_code(small, tmp_path):
    # the target stops from 10 m/s within 2 s, far harder than the assumed braking
    v = np.r_[np.full(40, 10.0), np.linspace(10.0, 0.0, 3), np.zeros(300)]
    save_trajectory_csv(TargetTrajectory.from_velocity(15.0, v, 1.0), tmp_path / "brake.csv")
    doc = json.loads(small["scenario"].read_text())
    doc.update(route=str(small["route"]), predictor="constant", max_time=60.0,
               target={"csv": str(tmp_path / "brake.csv")})
    doc["solver"] = dict(doc["solver"], on_infeasible="brake", safety_guard=False)
    out = tmp_path / "o.json"
    assert _run("simulate", _write(tmp_path / "s.json", doc), out, "--format", "json") == EXIT_SAFETY
    kinds = {v["kind"] for v in read_json(out)["violations"]}
    assert "gap" in kinds and "collision" not in kinds
