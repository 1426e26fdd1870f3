"""Closed-loop simulation: sense, predict, plan, apply one spatial step, repeat."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ValidationError
from ..gap import safe_distance
from ..ocp.dp import GapContext, HorizonProblem, best_action, build_candidates, infeasibility_error, \
    solve_long_term, solve_receding_horizon
from ..ocp.grid import Grid3, uniform_axis
from ..powertrain import ControlInput, PlantParams, VehicleState, load_plant, step, stop_control
from ..predictor.features import OUT_OF_RANGE_DISTANCE, MIN_DISTANCE
from ..predictor.forecast import TargetForecast, constant_velocity_forecast
from ..predictor.gru import load_model, predict_batch
from ..route_world import RouteSpec, TargetTrajectory, gen_target_trajectory, load_route, load_trajectory_csv
from .config import ScenarioConfig, SolverConfig

log = logging.getLogger(__name__)

CREEP_SPEED = 1.5   # m/s, target mid-step speed of a creep move

TRACE_COLUMNS = ("step", "node", "position", "t", "v_ego", "v_target", "gap", "d_safe", "soc", "t_eng", "t_bsg",
                 "fuel_rate", "dt", "fuel", "signal_phase", "event")


@dataclass
class ScenarioReport:
    name: str
    predictor: str
    fuel_consumed: float
    travel_time: float
    final_soc: float
    initial_soc: float
    trace: list
    violations: list
    lights_on_green: int
    lights_total: int
    fallbacks: int = 0
    solves: int = 0
    status: str = "ok"

    def summary(self) -> dict:
        return {"name": self.name, "predictor": self.predictor, "fuel_consumed": self.fuel_consumed,
                "travel_time": self.travel_time, "initial_soc": self.initial_soc, "final_soc": self.final_soc,
                "lights_on_green": self.lights_on_green, "lights_total": self.lights_total,
                "violations": len(self.violations), "fallbacks": self.fallbacks, "solves": self.solves,
                "status": self.status}


# ------------------------------------------------------------------ shared setup

def long_term_grid(solver: SolverConfig, plant: PlantParams) -> Grid3:
    b = plant.battery
    return Grid3(uniform_axis(0.0, solver.v_max, solver.v_step), uniform_axis(b.soc_min, b.soc_max, solver.soc_step))


_LONG_TERM = {}


def long_term_table(route: RouteSpec, plant: PlantParams, solver: SolverConfig, soc_target: float, key=None):
    """Long-term value table, memoised per (route, plant, solver, target) within a process."""
    controls = solver.long_term_controls or solver.controls
    k = (key, solver, soc_target) if key is not None else None
    if k is not None and k in _LONG_TERM:
        return _LONG_TERM[k]
    table = solve_long_term(route, plant, long_term_grid(solver, plant), solver.gamma, soc_target, controls,
                            solver.soc_penalty)
    if k is not None:
        if len(_LONG_TERM) > 8:
            _LONG_TERM.clear()
        _LONG_TERM[k] = table
    return table


def target_trajectory(cfg: ScenarioConfig, route: RouteSpec) -> TargetTrajectory | None:
    if not cfg.target.enabled:
        return None
    if cfg.target.csv is not None:
        return load_trajectory_csv(cfg.target.csv)
    t0 = cfg.departure_time - cfg.target.headstart
    return gen_target_trajectory(route, t0, cfg.target.driver, cfg.target.duration, cfg.target.seed)


def local_soc_axis(soc: float, solver: SolverConfig, plant: PlantParams) -> np.ndarray:
    b = plant.battery
    step_ = solver.soc_step_local
    center = round(soc / step_) * step_
    half = max(1, int(round(solver.soc_window / step_)))
    lo = max(b.soc_min, center - half * step_)
    hi = min(b.soc_max, center + half * step_)
    if soc < lo:
        lo = max(b.soc_min, lo - step_)
    if soc > hi:
        hi = min(b.soc_max, hi + step_)
    return uniform_axis(lo, hi, step_)


# ------------------------------------------------------------------ sensing

class Sensor:
    """What the ego observes about the target: 1 Hz samples and the current gap."""

    def __init__(self, traj: TargetTrajectory, route: RouteSpec, dsrc_range: float):
        self.traj, self.route, self.dsrc = traj, route, dsrc_range
        self.lights = np.array([i.position for i in route.intersections]) if route.intersections else np.zeros(0)

    def last_index(self, t: float) -> int:
        return int(np.searchsorted(self.traj.t, t + 1e-9, side="right") - 1)

    def distance_feature(self, target_pos: float, ego_pos: float) -> float:
        """Target distance to the light ahead of it, as seen through the ego's V2I range."""
        if not len(self.lights):
            return OUT_OF_RANGE_DISTANCE
        idx = int(np.searchsorted(self.lights, target_pos, side="right"))
        if idx >= len(self.lights):
            return OUT_OF_RANGE_DISTANCE
        light = self.lights[idx]
        if light - ego_pos >= self.dsrc:
            return OUT_OF_RANGE_DISTANCE
        return float(min(max(light - target_pos, MIN_DISTANCE), OUT_OF_RANGE_DISTANCE))

    def history(self, t: float, n: int, ego_pos_at) -> tuple[np.ndarray, float]:
        """(n, 3) feature rows ending at the last sample <= t (padded with the first)."""
        j = self.last_index(t)
        idx = np.clip(np.arange(j - n + 1, j + 1), 0, None)
        tr = self.traj
        rows = []
        for i in idx:
            a = 0.0 if i == 0 else (tr.v[i] - tr.v[i - 1]) / tr.sample_period
            rows.append([tr.v[i], a, self.distance_feature(float(tr.position[i]), ego_pos_at(float(tr.t[i])))])
        return np.array(rows), float(tr.t[j])


def _ego_position_fn(times: list, positions: list, t_start: float):
    def at(t):
        if t <= t_start or len(times) == 0:
            return 0.0
        return float(np.interp(t, times, positions))
    return at


# ------------------------------------------------------------------ main loop

def simulate(cfg: ScenarioConfig, model=None, route: RouteSpec | None = None, plant: PlantParams | None = None,
             traj: TargetTrajectory | None = None, long_term=None) -> ScenarioReport:
    """Run one closed-loop scenario to the end of the route.

    Raises
    ------
    SolverInfeasible
        When no action satisfies the constraints and ``on_infeasible`` is "abort".
    """
    route = route or load_route(cfg.route)
    plant = plant or load_plant(cfg.plant)
    solver = cfg.solver
    if traj is None:
        traj = target_trajectory(cfg, route)
    if cfg.predictor == "gru" and traj is not None and model is None:
        model = load_model(cfg.model)
    if model is not None and cfg.predictor == "gru":
        if abs(model.T_h - cfg.history_window) > 1e-9:
            raise ValidationError("history_window", f"model was trained with T_h={model.T_h}")
    soc_target = cfg.target_soc
    if long_term is None:
        long_term = long_term_table(route, plant, solver, soc_target, key=(str(cfg.route), str(cfg.plant)))
    lt_grid = long_term.grid
    controls = solver.controls
    sensor = Sensor(traj, route, cfg.dsrc_range) if traj is not None else None
    dd = route.distance_step
    N = route.n_steps
    signals = {node: route.intersections[i].spat for i, node in enumerate(route.intersection_nodes())}
    stop_nodes = set(route.stop_sign_nodes())

    state = VehicleState(0.0, cfg.initial_soc, cfg.departure_time)
    node = 0
    trace, violations = [], []
    times, positions = [cfg.departure_time], [0.0]
    ego_pos_at = _ego_position_fn(times, positions, cfg.departure_time)
    fuel_total = 0.0
    plan = None          # (solve node, solution, horizon) reused between replans
    ticks_since = 0
    fallbacks = solves = 0
    lights_green = lights_total = 0
    step_no = 0

    def target_now(t):
        if traj is None:
            return math.inf, 0.0
        return float(traj.position_at(t)), float(traj.velocity_at(t))

    def gap_context(t, ego_pos):
        if traj is None:
            return None
        tp, _ = target_now(t)
        gap0 = max(tp - ego_pos, 0.0)   # a negative gap is logged as a collision below
        if gap0 > cfg.gap.d_radar:
            ctx = GapContext(None, gap0, t, cfg.gap, solver.gap_margin)
            return ctx, ctx
        hist, t_last = sensor.history(t, int(round(cfg.history_window)), ego_pos_at)
        if t - t_last > traj.sample_period + 1e-9:
            # the recording has ended: hold the last observation from now on, so the
            # prediction window (and with it the constraint release) moves with the clock
            t_last = t
        if cfg.predictor == "gru":
            v = predict_batch(model, hist[None], model.n_future)[0]
            fc = TargetForecast.from_velocities(t_last, v, model.sample_period)
        else:
            fc = constant_velocity_forecast(float(hist[-1, 0]), cfg.forecast_horizon, 1.0, t_last)
        ctx = GapContext(fc, gap0, t, cfg.gap, solver.gap_margin, fc.start_time + fc.horizon)
        if not solver.safety_guard:
            return ctx, ctx
        return ctx, replace(ctx, guard=braking_bound(float(hist[-1, 0]), float(hist[-1, 1]), t_last))

    while node < N:
        if state.t - cfg.departure_time > cfg.max_time:
            violations.append({"kind": "timeout", "node": node, "t": state.t})
            break
        ego_pos = node * dd
        horizon = min(solver.horizon, N - node)
        gctx, gact = gap_context(state.t, ego_pos) if traj is not None else (None, None)
        choice = None
        reuse = plan is not None and ticks_since < solver.replan_stride and node - plan[0] < plan[2]
        if reuse:
            offset = node - plan[0]
            sol = plan[1]
            prob = HorizonProblem(route, plant, node, plan[2] - offset, state, solver.gamma, gact)
            choice = best_action(prob, 0, state, sol.tables[offset:], sol.grid, controls, solver.t_step)
            if not np.isfinite(choice["cost"]):
                choice = None
        if choice is None:
            plan_prob = HorizonProblem(route, plant, node, horizon, state, solver.gamma, gctx)
            prob = replace(plan_prob, gap=gact)
            soc_axis = local_soc_axis(state.soc, solver, plant)
            for span in _spans(solver):
                grid = Grid3(lt_grid.v, soc_axis, state.t + uniform_axis(0.0, span, solver.t_step))
                sol = solve_receding_horizon(plan_prob, long_term, grid, controls, solver.t_step,
                                             with_prediction=False)
                solves += 1
                choice = best_action(prob, 0, state, sol.tables, sol.grid, controls, solver.t_step)
                if np.isfinite(choice["cost"]):
                    break
            plan = (node, sol, horizon)
            ticks_since = 0
        ticks_since += 1
        event = "move"
        if not np.isfinite(choice["cost"]):
            if solver.on_infeasible == "abort":
                raise infeasibility_error(prob, choice["binding"])
            creep = None
            if state.v == 0.0 and node + 1 in stop_nodes:
                creep = creep_step(plant, route, node, state, controls)
                if creep is not None and gact is not None and gact.active() and \
                        not bool(gact.ok(dd, creep.state.t, 0.0)):
                    creep = None
            if creep is not None:
                event = "creep"
                choice = {"wait": False, "creep": creep}
            else:
                fallbacks += 1
                event = "fallback"
                choice = _fallback(plant, route, node, state, controls)
                log.warning("no feasible plan at node %d (t=%.1f); %s", node, state.t,
                            "waiting" if choice["wait"] else "braking")

        t_dep = state.t
        if choice["wait"]:
            new_state = VehicleState(0.0, state.soc, state.t + solver.t_step)
            t_eng = t_bsg = fuel_rate = 0.0
            dt = solver.t_step
            new_node = node
            event = "wait" if event == "move" else event
        elif "creep" in choice:
            c = choice["creep"]
            new_state, dt, fuel_rate = c.state, c.dt, c.fuel_rate
            t_eng, t_bsg = c.t_eng, c.t_bsg
            new_node = node + 1
        else:
            grade = float(route.grade_at((node + 0.5) * dd))
            res = step(plant, state, ControlInput(choice["t_eng"], choice["t_bsg"]), dd, grade)
            new_state, dt, fuel_rate = res.state, res.dt, res.fuel_rate
            t_eng, t_bsg = choice["t_eng"], choice["t_bsg"]
            new_node = node + 1
        phase = ""
        if not choice["wait"] and node in signals:
            green = signals[node].is_green(t_dep)
            phase = "green" if green else "red"
            lights_total += 1
            lights_green += int(green)
            if not green:
                violations.append({"kind": "red_light", "node": node, "t": t_dep})
        if new_node in stop_nodes and not choice["wait"] and new_state.v > 1e-9:
            violations.append({"kind": "stop_sign", "node": new_node, "t": new_state.t})
        b = plant.battery
        if not b.soc_min - 1e-9 <= new_state.soc <= b.soc_max + 1e-9:
            violations.append({"kind": "soc", "node": new_node, "t": new_state.t, "soc": new_state.soc})
        fuel = fuel_rate * dt
        fuel_total += fuel
        state = new_state
        node = new_node
        times.append(state.t)
        positions.append(node * dd)
        tp, vt = target_now(state.t)
        gap = tp - node * dd
        d_safe = safe_distance(cfg.gap, state.v, state.v - vt) if traj is not None else float("nan")
        if traj is not None:
            if gap <= 0.0:
                violations.append({"kind": "collision", "node": node, "t": state.t, "gap": gap})
            elif gap <= cfg.gap.d_radar and gap < d_safe:
                violations.append({"kind": "gap", "node": node, "t": state.t, "gap": gap, "d_safe": d_safe})
        trace.append({"step": step_no, "node": node, "position": node * dd, "t": state.t, "v_ego": state.v,
                      "v_target": vt if traj is not None else float("nan"),
                      "gap": gap if traj is not None else float("nan"), "d_safe": d_safe, "soc": state.soc,
                      "t_eng": t_eng, "t_bsg": t_bsg, "fuel_rate": fuel_rate, "dt": dt, "fuel": fuel,
                      "signal_phase": phase, "event": event})
        step_no += 1
    return ScenarioReport(cfg.name, cfg.predictor if traj is not None else "none", fuel_total,
                          state.t - cfg.departure_time, state.soc, cfg.initial_soc, trace, violations,
                          lights_green, lights_total, fallbacks, solves)


def braking_bound(v0: float, a0: float, start: float, duration: float = 20.0, period: float = 0.1):
    """Kinematic lower bound on target travel: keeps its current deceleration until it stops.

    A target that is not braking is held at its current speed.  Each
    interval holds the velocity reached at its end, so the bound never
    exceeds the exact constant-deceleration travel.
    """
    n = int(round(duration / period))
    v = v0 + min(a0, 0.0) * period * np.arange(1, n + 1)
    return TargetForecast.from_velocities(start, np.maximum(v, 0.0), period)


def _spans(solver: SolverConfig) -> list:
    """Time-axis lengths to try in order; the short one suffices unless the ego must queue."""
    if solver.t_span_first is None or solver.t_span_first >= solver.t_span:
        return [solver.t_span]
    return [solver.t_span_first, solver.t_span]


@dataclass(frozen=True)
class Creep:
    """Launch-and-stop over one spatial step, as two half steps; controls are the launch half's."""

    state: VehicleState
    dt: float
    fuel_rate: float       # mean over the whole step
    t_eng: float
    t_bsg: float


def creep_step(plant: PlantParams, route: RouteSpec, node: int, state: VehicleState, controls) -> Creep | None:
    """Move from standstill at ``node`` to standstill at ``node + 1``.

    The spatial model cannot traverse a step that starts and ends at rest,
    which deadlocks a vehicle queued one step short of a stop sign.  The
    step is split in two halves: the launching candidate whose mid-step
    speed is closest to ``CREEP_SPEED``, then the exact stop.  Returns None if either half is infeasible.
    """
    half = 0.5 * route.distance_step
    grade = float(route.grade_at((node + 0.5) * route.distance_step))
    cand = build_candidates(plant, controls, [0.0], half, grade)
    moving = cand.ok[0] & (cand.v_next[0] > 0.0)
    if not moving.any():
        return None
    u = int(np.flatnonzero(moving)[np.argmin(np.abs(cand.v_next[0][moving] - CREEP_SPEED))])
    first = step(plant, state, ControlInput(float(cand.t_eng[0, u]), float(cand.t_bsg[0, u])), half, grade)
    te, tb, ok = stop_control(plant, first.state.v, half, grade)
    if not bool(ok):
        return None
    second = step(plant, first.state, ControlInput(float(te), float(tb)), half, grade)
    b = plant.battery
    if not b.soc_min <= second.state.soc <= b.soc_max:
        return None
    dt = first.dt + second.dt
    fuel = first.fuel_rate * first.dt + second.fuel_rate * second.dt
    end = VehicleState(0.0, second.state.soc, second.state.t)
    return Creep(end, dt, fuel / dt, float(cand.t_eng[0, u]), float(cand.t_bsg[0, u]))


def _fallback(plant, route, node, state, controls):
    """Safety fallback: wait if stopped, otherwise the strongest feasible deceleration."""
    if state.v == 0.0:
        return {"wait": True, "t_eng": 0.0, "t_bsg": 0.0, "cost": math.inf}
    grade = float(route.grade_at((node + 0.5) * route.distance_step))
    cand = build_candidates(plant, controls, [state.v], route.distance_step, grade)
    ok = cand.ok[0]
    v_next = np.where(ok, cand.v_next[0], np.inf)
    u = int(np.argmin(v_next))
    return {"wait": False, "t_eng": float(cand.t_eng[0, u]), "t_bsg": float(cand.t_bsg[0, u]), "cost": math.inf}


def long_term_rollout(route: RouteSpec, plant: PlantParams, table, controls, gamma: float, soc0: float,
                      t0: float = 0.0) -> ScenarioReport:
    """Follow the long-term policy alone (no signals, no target) from standstill at node 0."""
    route = replace(route, intersections=())
    prob = HorizonProblem(route, plant, 0, route.n_steps, VehicleState(0.0, soc0, t0), gamma)
    state = prob.state
    trace = []
    fuel_total = 0.0
    for n in range(route.n_steps):
        ch = best_action(prob, n, state, table.values, table.grid, controls, 0.0)
        if not np.isfinite(ch["cost"]):
            raise infeasibility_error(HorizonProblem(route, plant, n, route.n_steps - n, state, gamma), ch["binding"])
        res = step(plant, state, ControlInput(ch["t_eng"], ch["t_bsg"]), route.distance_step,
                   float(route.grade_at((n + 0.5) * route.distance_step)))
        fuel = res.fuel_rate * res.dt
        fuel_total += fuel
        state = res.state
        trace.append({"step": n, "node": n + 1, "position": (n + 1) * route.distance_step, "t": state.t,
                      "v_ego": state.v, "v_target": float("nan"), "gap": float("nan"), "d_safe": float("nan"),
                      "soc": state.soc, "t_eng": ch["t_eng"], "t_bsg": ch["t_bsg"], "fuel_rate": res.fuel_rate,
                      "dt": res.dt, "fuel": fuel, "signal_phase": "", "event": "move"})
    return ScenarioReport(route.name, "long-term", fuel_total, state.t - t0, state.soc, soc0, trace, [], 0, 0)
