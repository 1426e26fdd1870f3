"""Quasi-static P0 mild-hybrid plant in the spatial domain.

One step moves the vehicle a fixed distance ``dd`` under a constant net
wheel force.  The gear (effective driveline ratio) is selected from the
velocity at the start of the step and held across it; crank speed for
fuelling and BSG power uses the mean velocity of the step, floored at idle.
Negative engine torque stands for the service brakes plus engine drag and
burns no fuel.

All array helpers broadcast, so the DP can evaluate a whole grid of
(velocity, control) pairs in one call with the same arithmetic the scalar
API uses.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InfeasibleTransition, PowerLimitError, SchemaError, ValidationError

G = 9.81
V_EPS = 1e-6          # mean velocity below which a step cannot be traversed
STOP_SNAP = 1e-9      # |v'^2| below this counts as an exact stop


@dataclass(frozen=True)
class Curve:
    """Piecewise-linear lookup, clamped at the first/last breakpoint."""

    x: tuple[float, ...]
    y: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "y", tuple(float(v) for v in self.y))
        if len(self.x) != len(self.y) or not self.x:
            raise ValidationError("curve", "x and y must be non-empty and equally long")
        if any(b <= a for a, b in zip(self.x, self.x[1:])):
            raise ValidationError("curve", "breakpoints must be strictly increasing")

    def __call__(self, v):
        out = np.interp(v, self.x, self.y)
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class FuelMap:
    """Fuel rate (g/s) on an (engine speed rad/s, engine torque N·m) grid, bilinear."""

    speed: tuple[float, ...]
    torque: tuple[float, ...]
    rate: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "speed", tuple(float(v) for v in self.speed))
        object.__setattr__(self, "torque", tuple(float(v) for v in self.torque))
        object.__setattr__(self, "rate", tuple(tuple(float(c) for c in row) for row in self.rate))
        tab = np.array(self.rate)
        if tab.shape != (len(self.speed), len(self.torque)):
            raise ValidationError("fuel_map.rate", f"shape {tab.shape} does not match the axes")
        if np.any(tab < 0):
            raise ValidationError("fuel_map.rate", "fuel rate must be >= 0")
        if np.any(np.diff(tab, axis=1) < 0):
            raise ValidationError("fuel_map.rate", "fuel rate must be non-decreasing in torque")
        for name in ("speed", "torque"):
            ax = getattr(self, name)
            if len(ax) < 2 or any(b <= a for a, b in zip(ax, ax[1:])):
                raise ValidationError(f"fuel_map.{name}", "axis must be strictly increasing with >= 2 points")
        object.__setattr__(self, "_tab", tab)

    @classmethod
    def willans(cls, speed, torque, efficiency=0.38, friction=(18.0, 0.025), lhv=42500.0):
        """Tabulate ``max(0, w*T/eff + w*(c0 + c1*w)) / lhv``."""
        w = np.asarray(speed, dtype=float)[:, None]
        tq = np.asarray(torque, dtype=float)[None, :]
        power = w * tq / efficiency + w * (friction[0] + friction[1] * w)
        tab = np.maximum(0.0, power) / lhv
        return cls(tuple(speed), tuple(torque), tuple(map(tuple, tab)))

    def __call__(self, omega, torque):
        sp = np.asarray(self.speed)
        tq = np.asarray(self.torque)
        w = np.clip(np.asarray(omega, dtype=float), sp[0], sp[-1])
        t = np.clip(np.asarray(torque, dtype=float), tq[0], tq[-1])
        i = np.clip(np.searchsorted(sp, w, side="right") - 1, 0, len(sp) - 2)
        j = np.clip(np.searchsorted(tq, t, side="right") - 1, 0, len(tq) - 2)
        fw = (w - sp[i]) / (sp[i + 1] - sp[i])
        ft = (t - tq[j]) / (tq[j + 1] - tq[j])
        tab = self._tab
        out = ((1 - fw) * (1 - ft) * tab[i, j] + fw * (1 - ft) * tab[i + 1, j]
               + (1 - fw) * ft * tab[i, j + 1] + fw * ft * tab[i + 1, j + 1])
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Engine:
    fuel_map: FuelMap
    torque_min: Curve
    torque_max: Curve
    idle_speed: float = 80.0


@dataclass(frozen=True)
class Bsg:
    torque_min: Curve
    torque_max: Curve
    efficiency: float = 0.9


@dataclass(frozen=True)
class Battery:
    capacity: float               # A·s
    open_circuit_voltage: float   # V
    internal_resistance: float    # Ohm
    soc_min: float = 0.3
    soc_max: float = 0.8

    def __post_init__(self):
        if not self.capacity > 0:
            raise ValidationError("battery.capacity", "must be > 0")
        if not self.soc_min < self.soc_max:
            raise ValidationError("battery.soc_min", "soc_min must be < soc_max")
        if not self.internal_resistance > 0:
            raise ValidationError("battery.internal_resistance", "must be > 0")


@dataclass(frozen=True)
class PlantParams:
    mass: float
    drag_area_coeff: float        # 0.5*rho*Cd*A, kg/m
    rolling_coeff: float
    wheel_radius: float
    driveline_ratio: Curve        # effective gear*final drive vs vehicle speed
    engine: Engine
    bsg: Bsg
    battery: Battery

    def __post_init__(self):
        if not self.mass > 0:
            raise ValidationError("mass", "must be > 0")
        if not self.wheel_radius > 0:
            raise ValidationError("wheel_radius", "must be > 0")
        for name, lo, hi in (("engine", self.engine.torque_min, self.engine.torque_max),
                             ("bsg", self.bsg.torque_min, self.bsg.torque_max)):
            xs = np.union1d(lo.x, hi.x)
            if np.any(lo(xs) > hi(xs)):
                raise ValidationError(f"{name}.torque_min", "min curve exceeds max curve")


@dataclass(frozen=True)
class VehicleState:
    v: float
    soc: float
    t: float = 0.0

    def __post_init__(self):
        if not self.v >= 0:
            raise ValidationError("v", f"must be >= 0, got {self.v}")
        if not 0.0 <= self.soc <= 1.0:
            raise ValidationError("soc", f"must be in [0, 1], got {self.soc}")
        if not self.t >= 0:
            raise ValidationError("t", f"must be >= 0, got {self.t}")


@dataclass(frozen=True)
class ControlInput:
    t_eng: float
    t_bsg: float


@dataclass(frozen=True)
class StepResult:
    state: VehicleState
    dt: float
    accel: float
    fuel_rate: float
    bsg_power: float      # electrical, W, positive = discharge
    soc_delta: float


def default_plant() -> PlantParams:
    """Desk-scale 1600 kg / 48 V P0 mild hybrid used by all shipped scenarios."""
    speed_axis = (80.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0, 500.0, 600.0)
    torque_axis = tuple(float(x) for x in range(0, 275, 25))
    return PlantParams(
        mass=1600.0,
        drag_area_coeff=0.414,
        rolling_coeff=0.009,
        wheel_radius=0.33,
        driveline_ratio=Curve((0, 4, 8, 12, 16, 20, 25, 30), (14.0, 14.0, 9.0, 6.2, 4.8, 4.0, 3.4, 3.0)),
        engine=Engine(
            fuel_map=FuelMap.willans(speed_axis, torque_axis),
            torque_min=Curve((0, 1, 4, 8, 12, 16, 20, 25, 30),
                             (0.0, -150.0, -150.0, -235.0, -340.0, -440.0, -528.0, -621.0, -704.0)),
            torque_max=Curve((0, 4, 8, 30), (200.0, 230.0, 250.0, 250.0)),
            idle_speed=80.0,
        ),
        bsg=Bsg(torque_min=Curve((0, 20, 30), (-50.0, -50.0, -44.0)),
                torque_max=Curve((0, 20, 30), (50.0, 50.0, 44.0)),
                efficiency=0.9),
        battery=Battery(capacity=28800.0, open_circuit_voltage=48.0, internal_resistance=0.03,
                        soc_min=0.3, soc_max=0.8),
    )


# ------------------------------------------------------------------ config IO

def plant_to_dict(p: PlantParams) -> dict:
    def curve(c):
        return {"v": list(c.x), "torque": list(c.y)}
    return {
        "mass": p.mass,
        "drag_area_coeff": p.drag_area_coeff,
        "rolling_coeff": p.rolling_coeff,
        "wheel_radius": p.wheel_radius,
        "driveline_ratio": {"v": list(p.driveline_ratio.x), "ratio": list(p.driveline_ratio.y)},
        "engine": {
            "idle_speed": p.engine.idle_speed,
            "torque_min": curve(p.engine.torque_min),
            "torque_max": curve(p.engine.torque_max),
            "fuel_map": {"speed": list(p.engine.fuel_map.speed), "torque": list(p.engine.fuel_map.torque),
                         "rate": [list(r) for r in p.engine.fuel_map.rate]},
        },
        "bsg": {"efficiency": p.bsg.efficiency, "torque_min": curve(p.bsg.torque_min),
                "torque_max": curve(p.bsg.torque_max)},
        "battery": asdict(p.battery),
    }


def plant_from_dict(doc: dict, path=None) -> PlantParams:
    def get(d, key, ctx):
        if not isinstance(d, dict) or key not in d:
            raise SchemaError("missing required field", path=path, field=ctx + key)
        return d[key]

    def curve(d, ctx, ykey="torque"):
        return Curve(tuple(get(d, "v", ctx)), tuple(get(d, ykey, ctx)))

    try:
        eng = get(doc, "engine", "")
        fm = get(eng, "fuel_map", "engine.")
        bsg = get(doc, "bsg", "")
        bat = get(doc, "battery", "")
        return PlantParams(
            mass=float(get(doc, "mass", "")),
            drag_area_coeff=float(get(doc, "drag_area_coeff", "")),
            rolling_coeff=float(get(doc, "rolling_coeff", "")),
            wheel_radius=float(get(doc, "wheel_radius", "")),
            driveline_ratio=curve(get(doc, "driveline_ratio", ""), "driveline_ratio.", "ratio"),
            engine=Engine(
                fuel_map=FuelMap(tuple(get(fm, "speed", "engine.fuel_map.")),
                                 tuple(get(fm, "torque", "engine.fuel_map.")),
                                 tuple(tuple(r) for r in get(fm, "rate", "engine.fuel_map."))),
                torque_min=curve(get(eng, "torque_min", "engine."), "engine.torque_min."),
                torque_max=curve(get(eng, "torque_max", "engine."), "engine.torque_max."),
                idle_speed=float(eng.get("idle_speed", 80.0)),
            ),
            bsg=Bsg(torque_min=curve(get(bsg, "torque_min", "bsg."), "bsg.torque_min."),
                    torque_max=curve(get(bsg, "torque_max", "bsg."), "bsg.torque_max."),
                    efficiency=float(bsg.get("efficiency", 0.9))),
            battery=Battery(**{k: float(get(bat, k, "battery.")) for k in
                               ("capacity", "open_circuit_voltage", "internal_resistance", "soc_min", "soc_max")}),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, (SchemaError, ValidationError)):
            raise
        raise SchemaError(str(exc), path=path) from exc


def load_plant(file_path) -> PlantParams:
    from .route_world import load_json
    return plant_from_dict(load_json(file_path), path=file_path)


def save_plant(p: PlantParams, file_path) -> None:
    Path(file_path).write_text(json.dumps(plant_to_dict(p), indent=2) + "\n")


# ------------------------------------------------------------------ physics

def torque_limits(params: PlantParams, v) -> dict:
    """Speed-dependent actuator bounds ``{"t_eng": (lo, hi), "t_bsg": (lo, hi)}``."""
    if np.any(np.asarray(v) < 0):
        raise ValueError("v must be >= 0")
    return {"t_eng": (params.engine.torque_min(v), params.engine.torque_max(v)),
            "t_bsg": (params.bsg.torque_min(v), params.bsg.torque_max(v))}


def crank_speed(params: PlantParams, v_mean, ratio):
    return np.maximum(params.engine.idle_speed, np.asarray(v_mean, dtype=float) * ratio / params.wheel_radius)


def fuel_rate(params: PlantParams, v, t_eng, ratio=None):
    """Engine fuel flow in g/s; zero for non-positive torque (fuel cut / start-stop)."""
    if ratio is None:
        ratio = params.driveline_ratio(v)
    omega = crank_speed(params, v, ratio)
    rate = params.engine.fuel_map(omega, np.maximum(t_eng, 0.0))
    out = np.where(np.asarray(t_eng) > 0.0, rate, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def bsg_electrical_power(params: PlantParams, t_bsg, omega):
    mech = np.asarray(t_bsg, dtype=float) * omega
    eta = params.bsg.efficiency
    return np.where(mech >= 0.0, mech / eta, mech * eta)


def battery_current(params: PlantParams, power):
    """Smaller root of ``Voc*I - R0*I^2 = P``; NaN where the discriminant is negative."""
    b = params.battery
    disc = b.open_circuit_voltage ** 2 - 4.0 * b.internal_resistance * np.asarray(power, dtype=float)
    with np.errstate(invalid="ignore"):
        root = np.sqrt(disc)
    return np.where(disc >= 0.0, 2.0 * np.asarray(power, dtype=float) / (b.open_circuit_voltage + root), np.nan)


def soc_transition(params: PlantParams, soc: float, bsg_power: float, dt: float) -> float:
    """Coulomb counting through the zero-order equivalent circuit; never clamps."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    current = float(battery_current(params, bsg_power))
    if math.isnan(current):
        raise PowerLimitError(f"battery cannot deliver {bsg_power:.1f} W")
    return soc - current * dt / params.battery.capacity


def step_arrays(params: PlantParams, v, t_eng, t_bsg, dd: float, grade=0.0):
    """Vectorised spatial step.

    Returns ``(v_next, dt, accel, fuel_rate, bsg_power, soc_delta, ok)``;
    entries where ``ok`` is False are meaningless.
    """
    v = np.asarray(v, dtype=float)
    t_eng = np.asarray(t_eng, dtype=float)
    t_bsg = np.asarray(t_bsg, dtype=float)
    ratio = params.driveline_ratio(v)
    force = ((t_eng + t_bsg) * ratio / params.wheel_radius
             - params.drag_area_coeff * v * v
             - params.mass * G * (params.rolling_coeff * np.cos(grade) + np.sin(grade)))
    accel = force / params.mass
    vsq = v * v + 2.0 * accel * dd
    stopped = np.abs(vsq) <= STOP_SNAP * np.maximum(1.0, v * v)
    vsq = np.where(stopped, 0.0, vsq)
    ok = vsq >= 0.0
    v_next = np.sqrt(np.maximum(vsq, 0.0))
    v_mean = 0.5 * (v + v_next)
    ok &= v_mean > V_EPS
    v_mean_safe = np.where(ok, v_mean, 1.0)
    dt = dd / v_mean_safe
    omega = crank_speed(params, v_mean_safe, ratio)
    fuel = np.where(t_eng > 0.0, params.engine.fuel_map(omega, np.maximum(t_eng, 0.0)), 0.0)
    power = bsg_electrical_power(params, t_bsg, omega)
    current = battery_current(params, power)
    ok &= ~np.isnan(current)
    soc_delta = -np.where(ok, current, 0.0) * dt / params.battery.capacity
    return v_next, dt, accel, fuel, power, soc_delta, ok


def step(params: PlantParams, state: VehicleState, u: ControlInput, dd: float, grade: float = 0.0) -> StepResult:
    if not dd > 0:
        raise ValueError("dd must be > 0")
    v_next, dt, accel, fuel, power, dsoc, ok = step_arrays(params, state.v, u.t_eng, u.t_bsg, dd, grade)
    if not bool(ok):
        vsq = state.v ** 2 + 2.0 * float(accel) * dd
        if vsq >= 0.0 and 0.5 * (state.v + math.sqrt(max(vsq, 0.0))) <= V_EPS or vsq < 0.0:
            raise InfeasibleTransition(
                f"cannot traverse {dd} m from v={state.v:.3f} m/s with a={float(accel):.3f} m/s^2")
        raise PowerLimitError(f"battery cannot deliver {float(power):.1f} W")
    soc = state.soc + float(dsoc)
    new = VehicleState.__new__(VehicleState)
    object.__setattr__(new, "v", float(v_next))
    object.__setattr__(new, "soc", soc)  # not validated: the caller must see SoC violations
    object.__setattr__(new, "t", state.t + float(dt))
    return StepResult(new, float(dt), float(accel), float(fuel), float(power), float(dsoc))


def vehicle_transition(params: PlantParams, state: VehicleState, u: ControlInput, dd: float,
                       grade: float = 0.0) -> VehicleState:
    return step(params, state, u, dd, grade).state


def stage_cost(params: PlantParams, state: VehicleState, u: ControlInput, dd: float, gamma: float,
               grade: float = 0.0) -> float:
    """Weighted fuel mass and travel time of one spatial step."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    res = step(params, state, u, dd, grade)
    return (gamma * res.fuel_rate + (1.0 - gamma)) * res.dt


def stop_control(params: PlantParams, v, dd: float, grade=0.0):
    """Torques that bring the vehicle from ``v`` to rest exactly ``dd`` ahead.

    Regenerates with the BSG as far as its limit allows and covers the rest
    with (negative) engine/brake torque.  Returns ``(t_eng, t_bsg, ok)``
    arrays; ``ok`` is False where the brakes are not strong enough or
    ``v`` is zero.
    """
    v = np.asarray(v, dtype=float)
    ratio = params.driveline_ratio(v)
    force = (-params.mass * v * v / (2.0 * dd)
             + params.drag_area_coeff * v * v
             + params.mass * G * (params.rolling_coeff * np.cos(grade) + np.sin(grade)))
    t_req = force * params.wheel_radius / ratio
    t_bsg = np.clip(t_req, params.bsg.torque_min(v), 0.0)
    t_eng = t_req - t_bsg
    ok = (v > 0.0) & (t_eng >= params.engine.torque_min(v)) & (t_eng <= params.engine.torque_max(v))
    return t_eng, t_bsg, ok
