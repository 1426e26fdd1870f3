"""Route description, fixed-cycle signal timing, and target-vehicle trajectories.

Routes are spatial: every position is in metres from the route start, times
are in seconds and speeds in m/s.  Target trajectories are sampled at a fixed
1 s period; positions are always the trapezoidal integral of the sampled
velocities so that the car-following bookkeeping downstream is exact.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import SchemaError, ValidationError

SAMPLE_PERIOD = 1.0
_POS_TOL = 1e-6


@dataclass(frozen=True)
class SpatSchedule:
    """Fixed-cycle signal: green while ``(t - offset) mod cycle`` is in ``[green_start, green_end)``."""

    cycle_time: float
    green_start: float
    green_end: float
    offset: float = 0.0

    def __post_init__(self):
        if not self.cycle_time > 0:
            raise ValidationError("spat.cycle_time", f"must be > 0, got {self.cycle_time}")
        if not 0.0 <= self.green_start < self.green_end <= self.cycle_time:
            raise ValidationError(
                "spat.green_end" if self.green_end > self.cycle_time else "spat.green_start",
                "require 0 <= green_start < green_end <= cycle_time, got "
                f"[{self.green_start}, {self.green_end}) with cycle {self.cycle_time}")

    @property
    def always_green(self) -> bool:
        return self.green_start == 0.0 and self.green_end == self.cycle_time

    def is_green(self, t):
        """Vectorised phase test; accepts scalars or arrays."""
        x = np.asarray(t, dtype=float) - self.offset
        # written out (not np.mod) so the compiled DP mask can repeat it exactly
        phase = x - self.cycle_time * np.floor(x / self.cycle_time)
        out = (phase >= self.green_start) & (phase < self.green_end)
        if self.always_green:
            out = np.ones_like(out, dtype=bool)
        return bool(out) if np.ndim(out) == 0 else out

    def windows(self, t0: float, t1: float) -> list[tuple[float, float]]:
        """Green intervals intersected with ``[t0, t1]``; sorted, disjoint, non-empty."""
        if t1 < t0:
            raise ValueError("empty horizon")
        if self.always_green:
            return [(t0, t1)] if t1 > t0 else []
        c = self.cycle_time
        k = math.floor((t0 - self.offset) / c) - 1
        out = []
        while True:
            base = self.offset + k * c
            a, b = base + self.green_start, base + self.green_end
            if a > t1:
                break
            lo, hi = max(a, t0), min(b, t1)
            if hi > lo:
                out.append((lo, hi))
            k += 1
        return out


@dataclass(frozen=True)
class Intersection:
    position: float
    spat: SpatSchedule


@dataclass(frozen=True)
class RouteSpec:
    """Spatial itinerary.

    ``grade`` and ``speed_limits`` are piecewise-constant tables keyed by the
    start position of each segment; the first entry must start at 0.
    """

    length: float
    distance_step: float
    grade: tuple[tuple[float, float], ...] = ((0.0, 0.0),)
    speed_limits: tuple[tuple[float, float, float], ...] = ((0.0, 0.0, 20.0),)
    intersections: tuple[Intersection, ...] = ()
    stop_signs: tuple[float, ...] = ()
    name: str = "route"

    def __post_init__(self):
        if not self.length > 0:
            raise ValidationError("length", f"must be > 0, got {self.length}")
        if not self.distance_step > 0:
            raise ValidationError("distance_step", f"must be > 0, got {self.distance_step}")
        n = self.length / self.distance_step
        if abs(n - round(n)) > 1e-9:
            raise ValidationError("distance_step", "length must be an integer multiple of distance_step")
        for name, table in (("grade", self.grade), ("speed_limits", self.speed_limits)):
            if not table or table[0][0] != 0.0:
                raise ValidationError(name, "first segment must start at position 0")
            starts = [row[0] for row in table]
            if any(b <= a for a, b in zip(starts, starts[1:])):
                raise ValidationError(name, "segment starts must be strictly increasing")
        for start, vmin, vmax in self.speed_limits:
            if not 0.0 <= vmin < vmax:
                raise ValidationError("speed_limits", f"need 0 <= min < max at {start} m, got [{vmin}, {vmax}]")
        pos = [i.position for i in self.intersections]
        if any(b <= a for a, b in zip(pos, pos[1:])):
            raise ValidationError("intersections", "positions must be strictly increasing")
        if any(not 0.0 <= p <= self.length for p in pos):
            raise ValidationError("intersections", "positions must lie within [0, length]")
        if any(not 0.0 <= p <= self.length for p in self.stop_signs):
            raise ValidationError("stop_signs", "positions must lie within [0, length]")

    @property
    def n_steps(self) -> int:
        return int(round(self.length / self.distance_step))

    def node_positions(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.distance_step

    def grade_at(self, position):
        starts = np.array([g[0] for g in self.grade])
        vals = np.array([g[1] for g in self.grade])
        idx = np.searchsorted(starts, np.asarray(position, dtype=float), side="right") - 1
        out = vals[np.clip(idx, 0, len(vals) - 1)]
        return float(out) if np.ndim(out) == 0 else out

    def speed_limit_at(self, position):
        """``(v_min, v_max)`` at ``position``; beyond the route end the last segment holds."""
        starts = np.array([s[0] for s in self.speed_limits])
        idx = np.searchsorted(starts, np.asarray(position, dtype=float), side="right") - 1
        idx = np.clip(idx, 0, len(starts) - 1)
        vmin = np.array([s[1] for s in self.speed_limits])[idx]
        vmax = np.array([s[2] for s in self.speed_limits])[idx]
        if np.ndim(vmin) == 0:
            return float(vmin), float(vmax)
        return vmin, vmax

    def intersection_nodes(self) -> list[int]:
        """Node index at which each intersection's stop bar is crossed."""
        return [int(round(i.position / self.distance_step)) for i in self.intersections]

    def stop_sign_nodes(self) -> list[int]:
        return [int(round(p / self.distance_step)) for p in self.stop_signs]

    def next_intersection(self, position: float) -> int | None:
        """Index of the first intersection strictly ahead of ``position``."""
        for k, inter in enumerate(self.intersections):
            if inter.position > position:
                return k
        return None


def green_windows(route: RouteSpec, intersection_index: int, horizon) -> list[tuple[float, float]]:
    if not 0 <= intersection_index < len(route.intersections):
        raise IndexError(f"intersection index {intersection_index} out of range")
    t0, t1 = horizon
    if not t1 > t0:
        raise ValueError("horizon must be non-empty")
    return route.intersections[intersection_index].spat.windows(t0, t1)


# ---------------------------------------------------------------- route files

def _require(d, key, path, ctx=""):
    if not isinstance(d, dict) or key not in d:
        raise SchemaError("missing required field", path=path, field=f"{ctx}{key}")
    return d[key]


def _number(value, path, fieldname):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"expected a number, got {value!r}", path=path, field=fieldname)
    return float(value)


def route_from_dict(doc: dict, path=None) -> RouteSpec:
    length = _number(_require(doc, "length", path), path, "length")
    step = _number(doc.get("distance_step", 10.0), path, "distance_step")
    grade = []
    for i, seg in enumerate(doc.get("grade", [{"start": 0.0, "value": 0.0}])):
        grade.append((_number(_require(seg, "start", path, f"grade[{i}]."), path, f"grade[{i}].start"),
                      _number(_require(seg, "value", path, f"grade[{i}]."), path, f"grade[{i}].value")))
    limits = []
    for i, seg in enumerate(_require(doc, "speed_limits", path)):
        ctx = f"speed_limits[{i}]."
        limits.append((_number(_require(seg, "start", path, ctx), path, ctx + "start"),
                       _number(seg.get("min", 0.0), path, ctx + "min"),
                       _number(_require(seg, "max", path, ctx), path, ctx + "max")))
    inters = []
    for i, it in enumerate(doc.get("intersections", [])):
        ctx = f"intersections[{i}]."
        spat = _require(it, "spat", path, ctx)
        inters.append(Intersection(
            position=_number(_require(it, "position", path, ctx), path, ctx + "position"),
            spat=SpatSchedule(
                cycle_time=_number(_require(spat, "cycle_time", path, ctx + "spat."), path, ctx + "spat.cycle_time"),
                green_start=_number(_require(spat, "green_start", path, ctx + "spat."), path, ctx + "spat.green_start"),
                green_end=_number(_require(spat, "green_end", path, ctx + "spat."), path, ctx + "spat.green_end"),
                offset=_number(spat.get("offset", 0.0), path, ctx + "spat.offset"),
            )))
    stops = tuple(_number(p, path, f"stop_signs[{i}]") for i, p in enumerate(doc.get("stop_signs", [])))
    return RouteSpec(length=length, distance_step=step, grade=tuple(grade), speed_limits=tuple(limits),
                     intersections=tuple(inters), stop_signs=stops, name=str(doc.get("name", "route")))


def route_to_dict(route: RouteSpec) -> dict:
    return {
        "name": route.name,
        "length": route.length,
        "distance_step": route.distance_step,
        "grade": [{"start": s, "value": g} for s, g in route.grade],
        "speed_limits": [{"start": s, "min": lo, "max": hi} for s, lo, hi in route.speed_limits],
        "intersections": [
            {"position": i.position,
             "spat": {"cycle_time": i.spat.cycle_time, "green_start": i.spat.green_start,
                      "green_end": i.spat.green_end, "offset": i.spat.offset}}
            for i in route.intersections],
        "stop_signs": list(route.stop_signs),
    }


def load_json(file_path) -> dict:
    """Parse a JSON document, mapping syntax errors to :class:`SchemaError` with a line number."""
    path = Path(file_path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read file: {exc}", path=path) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(exc.msg, path=path, line=exc.lineno) from exc


def load_route(file_path) -> RouteSpec:
    doc = load_json(file_path)
    if not isinstance(doc, dict):
        raise SchemaError("top-level value must be an object", path=file_path, line=1)
    return route_from_dict(doc, path=file_path)


def save_route(route: RouteSpec, file_path) -> None:
    Path(file_path).write_text(json.dumps(route_to_dict(route), indent=2) + "\n")


# ------------------------------------------------------- target trajectories

@dataclass(frozen=True, eq=False)
class TargetTrajectory:
    """Uniformly sampled target motion; ``a[i]`` is the forward difference of ``v``."""

    sample_period: float
    t: np.ndarray
    v: np.ndarray
    a: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        for name in ("t", "v", "a", "position"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.t)
        if not (len(self.v) == len(self.a) == len(self.position) == n) or n == 0:
            raise ValidationError("samples", "t, v, a, position must be non-empty and equally long")
        if np.any(self.v < 0):
            raise ValidationError("v", "velocity must be >= 0")
        if n > 1:
            dt = self.sample_period
            if np.any(np.abs(np.diff(self.t) - dt) > 1e-9):
                raise ValidationError("t", "samples must be uniformly spaced by sample_period")
            step = np.diff(self.position) - 0.5 * (self.v[1:] + self.v[:-1]) * dt
            if np.any(np.abs(step) > _POS_TOL):
                raise ValidationError("position", "not the trapezoidal integral of v")
            fd = np.diff(self.v) / dt
            if np.any(np.abs(self.a[:-1] - fd) > 1e-9) or abs(self.a[-1] - fd[-1]) > 1e-9:
                raise ValidationError("a", "not the finite difference of v")

    def __len__(self):
        return len(self.t)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    @classmethod
    def from_velocity(cls, t0: float, v, sample_period: float = SAMPLE_PERIOD,
                      position0: float = 0.0) -> "TargetTrajectory":
        v = np.asarray(v, dtype=float)
        t = t0 + sample_period * np.arange(len(v))
        pos = np.empty_like(v)
        pos[0] = position0
        if len(v) > 1:
            pos[1:] = position0 + np.cumsum(0.5 * (v[1:] + v[:-1]) * sample_period)
            a = np.empty_like(v)
            a[:-1] = np.diff(v) / sample_period
            a[-1] = a[-2]
        else:
            a = np.zeros_like(v)
        return cls(sample_period, t, v, a, pos)

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        i = np.clip(np.floor((t - self.t[0]) / self.sample_period).astype(int), 0, max(len(self.t) - 2, 0))
        return t, i

    def position_at(self, t):
        """Exact integral of the piecewise-linear velocity; holds the last velocity past the end."""
        if len(self.t) == 1:
            t = np.asarray(t, dtype=float)
            out = self.position[0] + self.v[0] * np.maximum(t - self.t[0], 0.0)
            return float(out) if out.ndim == 0 else out
        t, i = self._locate(t)
        tau = t - self.t[i]
        slope = (self.v[i + 1] - self.v[i]) / self.sample_period
        inside = self.position[i] + self.v[i] * tau + 0.5 * slope * tau * tau
        out = np.where(t <= self.t[0], self.position[0],
                       np.where(t >= self.t[-1], self.position[-1] + self.v[-1] * (t - self.t[-1]), inside))
        return float(out) if out.ndim == 0 else out

    def velocity_at(self, t):
        out = np.interp(np.asarray(t, dtype=float), self.t, self.v)
        return float(out) if np.ndim(out) == 0 else out

    def samples(self) -> list[dict]:
        return [{"t": float(a), "v": float(b), "a": float(c), "position": float(d)}
                for a, b, c, d in zip(self.t, self.v, self.a, self.position)]


def load_trajectory_csv(file_path) -> TargetTrajectory:
    """Read ``t,v[,a,pos]`` CSV, resample to 1 s, and rebuild ``a`` and position."""
    path = Path(file_path)
    try:
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"t", "v"} <= {f.strip() for f in reader.fieldnames}:
                raise SchemaError("header must contain columns t and v", path=path, line=1)
            ts, vs, pos0 = [], [], None
            for lineno, row in enumerate(reader, start=2):
                row = {k.strip(): val for k, val in row.items() if k is not None}
                try:
                    ts.append(float(row["t"]))
                    vs.append(float(row["v"]))
                    if pos0 is None and row.get("pos") not in (None, ""):
                        pos0 = float(row["pos"])
                except (TypeError, ValueError) as exc:
                    raise SchemaError(f"non-numeric value ({exc})", path=path, line=lineno) from exc
    except OSError as exc:
        raise SchemaError(f"cannot read file: {exc}", path=path) from exc
    if not ts:
        raise SchemaError("no data rows", path=path, line=2)
    t = np.array(ts)
    v = np.array(vs)
    if np.any(np.diff(t) <= 0):
        bad = int(np.argmax(np.diff(t) <= 0)) + 3
        raise SchemaError("time column must be strictly increasing", path=path, line=bad, field="t")
    if np.any(v < 0):
        raise ValidationError("v", f"negative velocity at row {int(np.argmax(v < 0)) + 2}")
    n = int(math.floor((t[-1] - t[0]) / SAMPLE_PERIOD + 1e-9)) + 1
    grid = t[0] + SAMPLE_PERIOD * np.arange(n)
    if len(t) != n or np.any(np.abs(grid - t) > 1e-9):
        v = np.interp(grid, t, v)
    return TargetTrajectory.from_velocity(float(t[0]), v, SAMPLE_PERIOD, position0=pos0 or 0.0)


def save_trajectory_csv(traj: TargetTrajectory, file_path) -> None:
    with Path(file_path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "v", "a", "pos"])
        for row in zip(traj.t, traj.v, traj.a, traj.position):
            w.writerow([repr(float(x)) for x in row])


# ------------------------------------------------------------ target driver

@dataclass(frozen=True)
class DriverParams:
    """IDM parameters plus the stochastic desired-speed model of one driver."""

    accel: float = 1.5            # IDM a, m/s^2
    comfort_decel: float = 2.0    # IDM b, m/s^2
    min_gap: float = 2.0          # s0 to virtual leaders (stop bars), m
    time_headway: float = 1.5     # T, s
    delta: float = 4.0
    speed_factor: float = 0.95    # mean desired speed / speed limit
    speed_factor_spread: float = 0.05   # per-seed uniform spread of the mean factor
    speed_noise: float = 0.04     # stationary std of the desired-speed factor fluctuation
    noise_tau: float = 20.0       # correlation time of that fluctuation, s
    accel_noise: float = 0.15     # white acceleration noise std, m/s^2
    max_decel: float = 6.0        # physical braking floor, m/s^2
    dilemma_decel: float = 3.5    # if stopping for a fresh red needs more than this, proceed
    stop_dwell: tuple[float, float] = (1.0, 3.0)   # dwell at stop signs, s
    reaction_delay: tuple[float, float] = (0.0, 2.0)  # delay after green before launching, s

    @classmethod
    def from_dict(cls, doc: dict | None) -> "DriverParams":
        doc = dict(doc or {})
        for key in ("stop_dwell", "reaction_delay"):
            if key in doc:
                doc[key] = tuple(doc[key])
        return cls(**doc)


def _idm_accel(p: DriverParams, v, v0, gap, dv):
    v0 = max(v0, 0.1)
    s_star = p.min_gap + max(0.0, v * p.time_headway + v * dv / (2.0 * math.sqrt(p.accel * p.comfort_decel)))
    free = 1.0 - (v / v0) ** p.delta
    inter = (s_star / max(gap, 0.1)) ** 2
    return p.accel * (free - inter)


def gen_target_trajectory(route: RouteSpec, departure_time: float, driver_params: DriverParams | None,
                          duration: float, seed: int, start_position: float = 0.0) -> TargetTrajectory:
    """Simulate one IDM driver along ``route`` at 1 s resolution.

    Red lights act as a standing leader at the stop bar, stop signs force a
    full stop plus a dwell.  Past the route end the last speed limit holds
    so that a follower can always complete the route.
    """
    if not duration > 0:
        raise ValueError("duration must be > 0")
    p = driver_params or DriverParams()
    rng = np.random.default_rng(seed)
    dt = SAMPLE_PERIOD
    n = int(math.floor(duration / dt + 1e-9)) + 1
    base_factor = p.speed_factor + p.speed_factor_spread * (2.0 * rng.random() - 1.0)
    rho = math.exp(-dt / p.noise_tau)
    ou = p.speed_noise * rng.standard_normal()

    stops = sorted(s for s in route.stop_signs if s > start_position + 0.5)
    stop_served = [False] * len(stops)
    dwell_left = None
    lights = list(route.intersections)
    launch_hold = 0.0
    was_held_by = None

    v = np.zeros(n)
    x = start_position
    vk = 0.0
    for k in range(n - 1):
        t = departure_time + k * dt
        vmax_here = route.speed_limit_at(x)[1]
        v0 = min(vmax_here, vmax_here * (base_factor + ou))
        a = _idm_accel(p, vk, v0, 1e9, 0.0)
        hold_target = None  # position the vehicle must not pass this step

        # stop signs: standing leader until stopped at the bar, then dwell
        for j, sp in enumerate(stops):
            if stop_served[j] or sp <= x - 0.5:
                continue
            if dwell_left is not None:
                dwell_left -= dt
                if dwell_left <= 0:
                    stop_served[j] = True
                    dwell_left = None
                    continue
                hold_target = x
                a = min(a, -vk / dt)
                break
            d = sp - x
            if vk < 0.05 and d < p.min_gap + 1.5:
                dwell_left = float(rng.uniform(*p.stop_dwell))
                hold_target = x
                a = min(a, -vk / dt)
                break
            a = min(a, _idm_accel(p, vk, v0, max(d - 0.5, 0.05) + p.min_gap, vk))
            hold_target = sp - 0.5
            break

        # signals: a red light is a standing leader at the bar
        held_now = None
        for li, inter in enumerate(lights):
            d = inter.position - x
            if d <= 0.0:
                continue
            if d > 250.0:
                break
            if not inter.spat.is_green(t):
                need = vk * vk / (2.0 * max(d - p.min_gap, 0.1))
                if was_held_by != li and need > p.dilemma_decel and d < vk * 3.0:
                    break  # dilemma zone: too close to stop comfortably, go through
                a = min(a, _idm_accel(p, vk, v0, max(d - 0.5, 0.05) + 0.0, vk))
                hold = inter.position - 0.5
                hold_target = hold if hold_target is None else min(hold_target, hold)
                held_now = li
            break
        if was_held_by is not None and held_now is None:
            # light just released the queue: human reaction delay before launching
            if vk < 0.5:
                launch_hold = float(rng.uniform(*p.reaction_delay))
        was_held_by = held_now
        if launch_hold > 0.0:
            launch_hold -= dt
            a = min(a, -vk / dt)

        a += p.accel_noise * rng.standard_normal()
        a = max(a, -p.max_decel)
        vn = max(0.0, vk + a * dt)
        xn = x + 0.5 * (vk + vn) * dt
        if hold_target is not None and xn > hold_target:
            vn = max(0.0, 2.0 * (hold_target - x) / dt - vk)
            xn = x + 0.5 * (vk + vn) * dt
        for _ in range(3):
            lim = route.speed_limit_at(xn)[1]
            if vn <= lim:
                break
            vn = lim
            xn = x + 0.5 * (vk + vn) * dt
        v[k + 1] = vn
        x, vk = xn, vn
        ou = rho * ou + p.speed_noise * math.sqrt(1.0 - rho * rho) * rng.standard_normal()
    return TargetTrajectory.from_velocity(departure_time, v, dt, position0=start_position)


def random_route(seed: int, length: float = 4000.0, distance_step: float = 10.0,
                 n_lights: int | None = None) -> RouteSpec:
    """Random urban corridor used to build synthetic training corpora."""
    rng = np.random.default_rng(seed)
    if n_lights is None:
        n_lights = int(rng.integers(3, 7))
    gaps = rng.uniform(300.0, 900.0, size=n_lights)
    pos = np.cumsum(gaps)
    pos = pos[pos < length - 100.0]
    inters = []
    for p_ in pos:
        cycle = float(rng.choice([50.0, 60.0, 70.0, 80.0, 90.0]))
        green = float(np.round(rng.uniform(0.35, 0.65) * cycle))
        inters.append(Intersection(float(np.round(p_ / distance_step) * distance_step),
                                   SpatSchedule(cycle, 0.0, green, float(np.round(rng.uniform(0, cycle))))))
    n_seg = int(rng.integers(1, 4))
    starts = np.sort(rng.choice(np.arange(1, int(length // 500)) * 500.0, size=n_seg - 1, replace=False)) \
        if n_seg > 1 else np.array([])
    limits = [(0.0, 0.0, float(rng.choice([13.4, 15.6, 17.9])))]
    for s in starts:
        limits.append((float(s), 0.0, float(rng.choice([11.2, 13.4, 15.6, 17.9]))))
    return RouteSpec(length=length, distance_step=distance_step, speed_limits=tuple(limits),
                     intersections=tuple(inters), stop_signs=(), name=f"random-{seed}")
