"""Long-term (v, soc) and receding-horizon (v, soc, t) dynamic programming."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import SolverInfeasible, ValidationError
from ..gap import GapConfig, safe_distance
from ..powertrain import ControlInput, PlantParams, VehicleState, step_arrays
from ..route_world import RouteSpec, green_windows
from . import kernel
from .grid import NO_CONTROL, SNAP, WAIT, Grid3, ValueTable, axis_weights, interpolate, interpolate_at

log = logging.getLogger(__name__)

STOP_TOL = 1e-9
LIMIT_TOL = 1e-9


# ------------------------------------------------------------------ transitions

@dataclass(frozen=True, eq=False)
class Candidates:
    """Transitions of every candidate control from a set of velocities, shape (nv, nu)."""

    v: np.ndarray
    t_eng: np.ndarray
    t_bsg: np.ndarray
    v_next: np.ndarray
    dt: np.ndarray
    accel: np.ndarray
    fuel: np.ndarray
    soc_delta: np.ndarray
    ok: np.ndarray

    def cost(self, gamma: float) -> np.ndarray:
        return np.where(self.ok, (gamma * self.fuel + (1.0 - gamma)) * self.dt, np.inf)


def build_candidates(plant: PlantParams, controls, v_values, dd: float, grade: float) -> Candidates:
    v_values = np.atleast_1d(np.asarray(v_values, dtype=float))
    lists = [controls.candidates(plant, float(v), dd, grade) for v in v_values]
    nu = max(len(te) for te, _ in lists)
    te = np.zeros((len(v_values), nu))
    tb = np.zeros((len(v_values), nu))
    present = np.zeros((len(v_values), nu), dtype=bool)
    for i, (e, b) in enumerate(lists):
        te[i, :len(e)] = e
        tb[i, :len(b)] = b
        present[i, :len(e)] = True
    vv = np.broadcast_to(v_values[:, None], te.shape)
    v_next, dt, accel, fuel, _, dsoc, ok = step_arrays(plant, vv, te, tb, dd, grade)
    return Candidates(v_values, te, tb, v_next, dt, accel, fuel, dsoc, ok & present)


class CandidateCache:
    """Grid-velocity candidates are static; cache them per road grade."""

    def __init__(self, plant: PlantParams, controls, dd: float):
        self.plant, self.controls, self.dd = plant, controls, dd
        self._store = {}

    def get(self, v_axis: np.ndarray, grade: float) -> Candidates:
        key = (v_axis.tobytes(), float(grade))
        if key not in self._store:
            self._store[key] = build_candidates(self.plant, self.controls, v_axis, self.dd, grade)
        return self._store[key]

    def stage(self, route: RouteSpec, v_axis: np.ndarray, node: int, gamma: float):
        """Candidates, velocity indices/weights and stage cost for leaving ``node``; memoised."""
        grade = float(route.grade_at((node + 0.5) * route.distance_step))
        nxt = node + 1
        sig = (route.speed_limit_at(min(nxt * route.distance_step, route.length)),
               nxt in set(route.stop_sign_nodes()), nxt in set(route.intersection_nodes()))
        key = ("stage", v_axis.tobytes(), grade, sig, float(gamma), route.distance_step)
        if key not in self._store:
            cand = self.get(v_axis, grade)
            feas = _all(static_checks(route, self.plant, self.controls, nxt, cand))
            iv, wv = axis_weights(v_axis, cand.v_next)
            self._store[key] = (cand, np.where(feas, iv, -1), wv, cand.cost(gamma))
        return self._store[key]


def static_checks(route: RouteSpec, plant: PlantParams, controls, node_next: int, cand: Candidates) -> dict:
    """Position-dependent constraints that do not involve time, as named boolean arrays."""
    pos = node_next * route.distance_step
    vmin, vmax = route.speed_limit_at(min(pos, route.length))
    stop_nodes = set(route.stop_sign_nodes())
    may_stop = node_next in stop_nodes or node_next in set(route.intersection_nodes())
    a_lo = getattr(controls, "accel_min", -np.inf)
    a_hi = getattr(controls, "accel_max", np.inf)
    checks = {
        "transition": cand.ok,
        "accel": (cand.accel >= a_lo - LIMIT_TOL) & (cand.accel <= a_hi + LIMIT_TOL),
        "speed_limit": (cand.v_next <= vmax + LIMIT_TOL)
        & ((cand.v_next >= vmin - LIMIT_TOL) | (may_stop & (cand.v_next == 0.0))),
    }
    if node_next in stop_nodes:
        checks["stop_sign"] = cand.v_next <= STOP_TOL
    return checks


def _all(checks: dict) -> np.ndarray:
    out = None
    for arr in checks.values():
        out = arr.copy() if out is None else out & arr
    return out


def soc_indices(grid: Grid3, plant: PlantParams, soc_values, soc_delta):
    """Next-SoC interpolation indices; -1 outside the battery window or the axis."""
    nxt = np.asarray(soc_values)[..., :] + np.asarray(soc_delta)[..., None]
    idx, w = axis_weights(grid.soc, nxt)
    b = plant.battery
    out_of_box = (nxt < b.soc_min - LIMIT_TOL) | (nxt > b.soc_max + LIMIT_TOL)
    return np.where(out_of_box, -1, idx), w


def time_indices(grid: Grid3, t_values, dt):
    """Arrival-time indices of shape (nv, nu, nt) for departures at ``t_values``."""
    t_arr = np.asarray(t_values, dtype=float)[None, None, :] + np.asarray(dt)[:, :, None]
    if len(grid.t) == 1:
        return np.zeros(t_arr.shape, dtype=np.int64), np.zeros(t_arr.shape)
    return axis_weights(grid.t, t_arr)


# ------------------------------------------------------------------ long-term

@dataclass(frozen=True)
class LongTermConfig:
    gamma: float = 0.6
    soc_target: float = 0.55
    soc_penalty: float = 1e4

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError("gamma", "must lie in [0, 1]")
        if not self.soc_penalty >= 0:
            raise ValidationError("soc_penalty", "must be >= 0")


def terminal_layer(route: RouteSpec, grid: Grid3, soc_target: float, penalty: float, node: int) -> np.ndarray:
    soc_part = penalty * np.maximum(0.0, soc_target - grid.soc)
    out = np.broadcast_to(soc_part[None, :, None], grid.shape).copy()
    if node in set(route.stop_sign_nodes()):
        out[grid.v > STOP_TOL] = np.inf
    return out


def solve_long_term(route: RouteSpec, plant: PlantParams, grid: Grid3, gamma: float, soc_target: float,
                    controls, soc_penalty: float = 1e4) -> ValueTable:
    """Full-route backward induction over (v, soc), ignoring signals and traffic.

    Raises
    ------
    SolverInfeasible
        When some stage has no finite node, naming the first such stage met
        during the backward pass.
    """
    if len(grid.t) != 1:
        grid = Grid3(grid.v, grid.soc)
    if not grid.soc[0] <= soc_target <= grid.soc[-1]:
        raise ValidationError("soc_target", "must lie inside the SoC axis")
    LongTermConfig(gamma, soc_target, soc_penalty)
    N = route.n_steps
    cache = CandidateCache(plant, controls, route.distance_step)
    values = [None] * (N + 1)
    policy = [None] * (N + 1)
    values[N] = terminal_layer(route, grid, soc_target, soc_penalty, N)
    if not np.isfinite(values[N]).any():
        raise SolverInfeasible("terminal layer has no finite node", stage=N)
    for n in range(N - 1, -1, -1):
        cand, iv, wv, cost = cache.stage(route, grid.v, n, gamma)
        is_, ws = soc_indices(grid, plant, grid.soc[None, None, :], cand.soc_delta)
        nv, nu = iv.shape
        it = np.zeros((nv, nu, 1), dtype=np.int64)
        wt = np.zeros((nv, nu, 1))
        mask = np.ones((nv, nu, 1), dtype=np.uint8)
        values[n], policy[n] = kernel.bellman_stage(values[n + 1], iv, wv, is_, ws, it, wt, cost, mask)
        if not np.isfinite(values[n]).any():
            raise SolverInfeasible(f"no feasible continuation from stage {n}", stage=n)
    return ValueTable(grid, route.node_positions(), values, policy)


# ------------------------------------------------------------------ receding horizon

@dataclass(frozen=True)
class GapContext:
    """What the controller knows about the target when planning.

    ``initial_gap`` is measured at ``t_ref`` with the ego exactly on the
    start node; ``forecast`` predicts the target from its start time on.
    """

    forecast: object
    initial_gap: float
    t_ref: float
    cfg: GapConfig = field(default_factory=GapConfig)
    margin: float = 0.0
    release_after: float = math.inf   # arrivals later than this are not checked
    guard: object = None              # optional second forecast the constraint must also hold under

    def active(self) -> bool:
        return self.forecast is not None and self.initial_gap <= self.cfg.d_radar

    def predicted_gap(self, ego_travel, t_arrive):
        off = self.forecast.offset_at(t_arrive) - self.forecast.offset_at(self.t_ref)
        return self.initial_gap + off - ego_travel

    def ok(self, ego_travel, t_arrive, v_next):
        """Following constraint at arrival.

        Released where the predicted gap exceeds radar range and for arrivals
        after ``release_after`` (the end of the prediction window).  With a
        ``guard`` forecast the constraint must hold under both forecasts.
        """
        out = self._ok_under(self.forecast, ego_travel, t_arrive, v_next)
        if self.guard is not None:
            out = out & self._ok_under(self.guard, ego_travel, t_arrive, v_next)
        return out

    def _ok_under(self, fc, ego_travel, t_arrive, v_next):
        t_arrive = np.asarray(t_arrive, dtype=float)
        n = len(fc.velocities)
        rel = np.maximum(t_arrive - fc.start_time, 0.0)
        i = np.minimum((rel // fc.sample_period).astype(np.int64), n - 1)
        vt = fc.velocities[i]
        off = fc.position_offsets[i] + vt * (rel - i * fc.sample_period)
        gap = self.initial_gap + (off - fc.offset_at(self.t_ref)) - ego_travel
        need = safe_distance(self.cfg, v_next, v_next - vt) + self.margin
        return (t_arrive > self.release_after) | (gap > self.cfg.d_radar) | (gap >= need)


@dataclass(frozen=True)
class HorizonProblem:
    """One receding-horizon instance rooted at route node ``start``."""

    route: RouteSpec
    plant: PlantParams
    start: int
    horizon: int
    state: VehicleState
    gamma: float = 0.6
    gap: GapContext | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValidationError("horizon", "must be >= 1")
        if self.start + self.horizon > self.route.n_steps:
            raise ValidationError("horizon", "start + horizon exceeds the route")
        if self.gap is not None and self.gap.initial_gap < 0:
            raise ValidationError("initial_gap", "must be >= 0")

    def green_windows(self, t_end: float) -> dict:
        """Green intervals of every signal inside the horizon, keyed by route node."""
        out = {}
        nodes = self.route.intersection_nodes()
        for idx, node in enumerate(nodes):
            if self.start <= node <= self.start + self.horizon:
                out[node] = green_windows(self.route, idx, (self.state.t, t_end))
        return out


def pass_at_green_feasible_times(route: RouteSpec, interval, window) -> list:
    """Arrival times in ``window`` allowed for a step covering ``interval`` (positions, m)."""
    lo, hi = interval
    if not 0.0 <= lo <= hi <= route.length:
        raise ValidationError("interval", "must lie within the route")
    t0, t1 = window
    out = [(t0, t1)]
    for idx, inter in enumerate(route.intersections):
        if lo <= inter.position <= hi:
            wins = green_windows(route, idx, (t0, t1))
            out = [(max(a, c), min(b, d)) for a, b in out for c, d in wins if max(a, c) < min(b, d)]
    return out


def _signal_state(route: RouteSpec):
    return {node: route.intersections[i].spat for i, node in enumerate(route.intersection_nodes())}


def dynamic_mask(problem: HorizonProblem, k: int, cand: Candidates, t_depart, signals: dict) -> dict:
    """Time-dependent checks for leaving horizon node ``k`` at times ``t_depart``.

    Returns named boolean arrays broadcastable to (nv, nu, nt).
    """
    node, node_next = problem.start + k, problem.start + k + 1
    t_depart = np.asarray(t_depart, dtype=float)
    t_arr = t_depart[None, None, :] + cand.dt[:, :, None]
    out = {}
    if node in signals:
        out["red_light"] = np.broadcast_to(signals[node].is_green(t_depart)[None, None, :], t_arr.shape)
    if node_next in signals:
        arr_ok = signals[node_next].is_green(t_arr) | (cand.v_next[:, :, None] <= STOP_TOL)
        out["red_light"] = arr_ok if "red_light" not in out else out["red_light"] & arr_ok
    g = problem.gap
    if g is not None and g.active():
        travel = (k + 1) * problem.route.distance_step
        out["gap"] = g.ok(travel, t_arr, np.broadcast_to(cand.v_next[:, :, None], t_arr.shape))
    return out


@dataclass
class HorizonSolution:
    control: ControlInput | None      # None when waiting
    wait: bool
    cost: float
    tables: list                      # tables[k] over the grid at horizon node k
    grid: Grid3
    predicted: list                   # VehicleState per horizon node following the plan
    binding: dict


def solve_receding_horizon(problem: HorizonProblem, terminal: ValueTable, grid: Grid3, controls,
                           wait_step: float | None = None, with_prediction: bool = True) -> HorizonSolution:
    """Backward induction over the horizon, then the best first action from the actual state.

    ``terminal`` is the long-term table; its layer at ``start + horizon`` is
    interpolated onto ``grid`` and used as the terminal cost.
    """
    route, plant = problem.route, problem.plant
    nv, ns, nt = grid.shape
    end = problem.start + problem.horizon
    vv, ss = np.meshgrid(grid.v, grid.soc, indexing="ij")
    term = interpolate_at(terminal.at(end), terminal.grid, vv, ss)
    tables = [None] * (problem.horizon + 1)
    tables[problem.horizon] = np.ascontiguousarray(np.broadcast_to(term[:, :, None], grid.shape))
    cache = _cache_for(plant, controls, route.distance_step)
    signals = _signal_state(route)
    iz = grid.zero_index
    wait_cost = (1.0 - problem.gamma) * np.diff(grid.t) if nt > 1 else None
    uniform_t = nt > 1 and np.all(np.abs(np.diff(grid.t) - (grid.t[-1] - grid.t[0]) / (nt - 1))
                                  <= 1e-12 * (grid.t[-1] - grid.t[0]) / (nt - 1))
    g = problem.gap
    fc_tuple = ((g.forecast.start_time, g.forecast.sample_period, g.forecast.velocities,
                 g.forecast.position_offsets) if g is not None and g.active()
                else (0.0, 1.0, np.zeros(1), np.zeros(2)))
    for k in range(problem.horizon - 1, -1, -1):
        n = problem.start + k
        cand, iv, wv, cost = cache.stage(route, grid.v, n, problem.gamma)
        is_, ws = soc_indices(grid, plant, grid.soc[None, None, :], cand.soc_delta)
        if uniform_t:
            it, wt, mask = kernel.stage_masks(grid.t, cand.dt, cand.v_next, iv >= 0,
                                              _spat_tuple(signals.get(n)), _spat_tuple(signals.get(n + 1)),
                                              _gap_tuple(problem, k), fc_tuple, SNAP)
        else:
            it, wt = time_indices(grid, grid.t, cand.dt)
            mask = np.ones((nv, cand.dt.shape[1], nt), dtype=bool)
            for arr in dynamic_mask(problem, k, cand, grid.t, signals).values():
                mask &= arr
        values, best = kernel.bellman_stage(tables[k + 1], iv, wv, is_, ws, it, wt, cost, mask)
        if iz is not None and nt > 1:
            kernel.standstill_sweep(values, best, iz, wait_cost)
        tables[k] = values
    step = wait_step if wait_step is not None else (grid.t[1] - grid.t[0] if nt > 1 else 1.0)
    choice = best_action(problem, 0, problem.state, tables, grid, controls, step)
    predicted = [problem.state]
    if with_prediction and choice["cost"] < np.inf:
        predicted = rollout_plan(problem, tables, grid, controls, step)
    control = None if choice["wait"] or choice["index"] is None else ControlInput(choice["t_eng"], choice["t_bsg"])
    return HorizonSolution(control, choice["wait"], choice["cost"], tables, grid, predicted, choice["binding"])


def _spat_tuple(spat):
    if spat is None or spat.always_green:
        return (False, 1.0, 0.0, 1.0, 0.0)
    return (True, spat.cycle_time, spat.green_start, spat.green_end, spat.offset)


def _gap_tuple(problem: HorizonProblem, k: int):
    g = problem.gap
    if g is None or not g.active():
        return (False, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, math.inf)
    cfg = g.cfg
    return (True, g.initial_gap, g.forecast.offset_at(g.t_ref), (k + 1) * problem.route.distance_step,
            cfg.d0, cfg.t_gap, 2.0 * math.sqrt(cfg.a_max * cfg.b_max), g.margin, cfg.d_radar, g.release_after)


_CACHES = {}


def _cache_for(plant, controls, dd):
    key = (id(plant), id(controls), dd)
    if key not in _CACHES:
        if len(_CACHES) > 16:
            _CACHES.clear()
        _CACHES[key] = (plant, controls, CandidateCache(plant, controls, dd))
    return _CACHES[key][2]


def best_action(problem: HorizonProblem, k: int, state: VehicleState, tables: list, grid: Grid3, controls,
                wait_step: float) -> dict:
    """Exact one-step lookahead from an off-grid state at horizon node ``k``.

    Returns a dict with the chosen candidate (or ``wait``), its cost and,
    for every candidate, the first constraint it violates.
    """
    route, plant = problem.route, problem.plant
    n = problem.start + k
    grade = float(route.grade_at((n + 0.5) * route.distance_step))
    cand = build_candidates(plant, controls, [state.v], route.distance_step, grade)
    checks = static_checks(route, plant, controls, n + 1, cand)
    soc_next = state.soc + cand.soc_delta
    b = plant.battery
    checks["soc"] = (soc_next >= b.soc_min - LIMIT_TOL) & (soc_next <= b.soc_max + LIMIT_TOL)
    dyn = dynamic_mask(problem, k, cand, np.array([state.t]), _signal_state(route))
    for name, arr in dyn.items():
        checks[name] = checks.get(name, True) & np.asarray(arr)[:, :, 0]
    t_arr = state.t + cand.dt
    nxt = tables[k + 1]
    iv, wv = axis_weights(grid.v, cand.v_next)
    is_, ws = axis_weights(grid.soc, soc_next)
    if len(grid.t) == 1:
        it, wt = np.zeros_like(iv), np.zeros_like(wv)
    else:
        it, wt = axis_weights(grid.t, t_arr)
        checks["time_window"] = it >= 0
    feas = _all(checks)
    cont = interpolate(nxt, iv, wv, is_, ws, it, wt)
    total = np.where(feas, cand.cost(problem.gamma) + cont, np.inf)[0]
    idx = int(np.argmin(total)) if len(total) else None
    value = float(total[idx]) if idx is not None else np.inf
    wait = False
    if state.v == 0.0 and len(grid.t) > 1 and wait_step > 0:
        w = (1.0 - problem.gamma) * wait_step + interpolate_at(tables[k], grid, 0.0, state.soc, state.t + wait_step)
        if w < value:
            value, wait = w, True
    binding = {}
    for u in range(total.shape[0]):
        name = next((nm for nm, arr in checks.items() if not bool(np.asarray(arr)[0, u])), None)
        if name is None and not np.isfinite(total[u]):
            name = "continuation"
        binding[u] = name
    return {"index": idx if not wait and np.isfinite(value) else None, "wait": wait, "cost": value,
            "t_eng": float(cand.t_eng[0, idx]) if idx is not None else 0.0,
            "t_bsg": float(cand.t_bsg[0, idx]) if idx is not None else 0.0,
            "binding": binding}


def rollout_plan(problem: HorizonProblem, tables, grid, controls, wait_step: float, max_waits: int = 600) -> list:
    """Follow the tables greedily under the forecast; returns the predicted node states."""
    from ..powertrain import step as plant_step
    state = problem.state
    out = [state]
    k = 0
    waits = 0
    while k < problem.horizon:
        ch = best_action(problem, k, state, tables, grid, controls, wait_step)
        if not np.isfinite(ch["cost"]):
            break
        if ch["wait"]:
            waits += 1
            if waits > max_waits:
                break
            state = VehicleState(0.0, state.soc, state.t + wait_step)
            continue
        grade = float(problem.route.grade_at((problem.start + k + 0.5) * problem.route.distance_step))
        res = plant_step(problem.plant, state, ControlInput(ch["t_eng"], ch["t_bsg"]),
                         problem.route.distance_step, grade)
        state = res.state
        out.append(state)
        k += 1
    return out


def infeasibility_error(problem: HorizonProblem, binding: dict) -> SolverInfeasible:
    counts = {}
    for name in binding.values():
        counts[name] = counts.get(name, 0) + 1
    s = problem.state
    return SolverInfeasible(
        f"no feasible action at node {problem.start} (v={s.v:.3f}, soc={s.soc:.4f}, t={s.t:.2f})",
        stage=problem.start, state={"v": s.v, "soc": s.soc, "t": s.t}, binding=counts)
