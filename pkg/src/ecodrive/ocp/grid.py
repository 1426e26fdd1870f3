"""State grids, value tables, control candidate sets and multilinear interpolation weights."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ValidationError
from ..powertrain import PlantParams, stop_control, torque_limits

# Fractional offsets this close to a node are snapped onto it, so that a
# transition landing on a node up to round-off never touches the neighbour.
SNAP = 1e-12
WAIT = -2        # policy index for "stay at standstill one time step"
NO_CONTROL = -1  # policy index where every candidate is infeasible


def _axis(values, name: str) -> np.ndarray:
    a = np.array(values, dtype=float)
    if a.ndim != 1 or len(a) < 2 or np.any(np.diff(a) <= 0):
        raise ValidationError(name, "axis must be strictly increasing with at least 2 points")
    a.setflags(write=False)
    return a


def uniform_axis(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


@dataclass(frozen=True, eq=False)
class Grid3:
    """Velocity, SoC and (absolute) time axes of the short-horizon DP.

    A one-point time axis is allowed and turns the grid into the
    time-free (v, soc) grid of the long-term problem.
    """

    v: np.ndarray
    soc: np.ndarray
    t: np.ndarray = field(default_factory=lambda: np.zeros(1))

    def __post_init__(self):
        object.__setattr__(self, "v", _axis(self.v, "grid.v"))
        object.__setattr__(self, "soc", _axis(self.soc, "grid.soc"))
        t = np.array(self.t, dtype=float)
        if len(t) == 1:
            t.setflags(write=False)
        else:
            t = _axis(t, "grid.t")
        object.__setattr__(self, "t", t)
        if self.v[0] < 0:
            raise ValidationError("grid.v", "velocities must be >= 0")

    @property
    def shape(self) -> tuple:
        return (len(self.v), len(self.soc), len(self.t))

    @property
    def zero_index(self) -> int | None:
        hits = np.flatnonzero(self.v == 0.0)
        return int(hits[0]) if len(hits) else None


def axis_weights(axis: np.ndarray, x):
    """Lower node index and weight of the upper node for each query.

    Queries outside ``[axis[0], axis[-1]]`` (or NaN) get index -1.  Weights
    within ``SNAP`` of 0 or 1 are snapped.
    """
    x = np.asarray(x, dtype=float)
    n = len(axis)
    if n == 1:
        inside = x == axis[0]
        return np.where(inside, 0, -1).astype(np.int64), np.zeros(x.shape)
    step = (axis[-1] - axis[0]) / (n - 1)
    if np.all(np.abs(np.diff(axis) - step) <= 1e-12 * step):
        # uniform axis: index arithmetic instead of a binary search
        with np.errstate(invalid="ignore"):
            f = (x - axis[0]) / step
            i = np.clip(np.floor(np.nan_to_num(f, nan=-1.0)), 0, n - 2).astype(np.int64)
        w = f - i
    else:
        i = np.clip(np.searchsorted(axis, x, side="right") - 1, 0, n - 2)
        lo = axis[i]
        w = (x - lo) / (axis[i + 1] - lo)
    w = np.where(np.abs(w) <= SNAP, 0.0, w)
    w = np.where(np.abs(w - 1.0) <= SNAP, 1.0, w)
    # move exact upper hits onto the upper node so w is 0 wherever possible
    up = (w == 1.0) & (i + 1 <= n - 1)
    i = np.where(up, i + 1, i)
    w = np.where(up, 0.0, w)
    bad = ~((w >= 0.0) & (w < 1.0)) | np.isnan(x)
    return np.where(bad, -1, i).astype(np.int64), np.where(bad, 0.0, w)


def lerp(a, b, w):
    """``a`` at w = 0, ``b`` at w = 1, otherwise the blend (infinite if either end is)."""
    with np.errstate(invalid="ignore"):
        return np.where(w == 0.0, a, np.where(w == 1.0, b, (1.0 - w) * a + w * b))


def interpolate(values: np.ndarray, iv, wv, is_, ws, it, wt):
    """Multilinear lookup with broadcast index/weight arrays; -1 indices give +inf.

    The blend order (time, then SoC, then velocity) is the one used by the
    compiled kernel, so both produce identical bits.
    """
    nv, ns, nt = values.shape
    iv, is_, it = np.broadcast_arrays(np.asarray(iv), np.asarray(is_), np.asarray(it))
    wv, ws, wt = np.broadcast_arrays(np.asarray(wv, dtype=float), np.asarray(ws, dtype=float),
                                     np.asarray(wt, dtype=float))
    bad = (iv < 0) | (is_ < 0) | (it < 0)
    iv0 = np.where(bad, 0, iv)
    is0 = np.where(bad, 0, is_)
    it0 = np.where(bad, 0, it)
    iv1 = np.minimum(iv0 + 1, nv - 1)
    is1 = np.minimum(is0 + 1, ns - 1)
    it1 = np.minimum(it0 + 1, nt - 1)

    def along_t(a, c):
        return lerp(values[a, c, it0], values[a, c, it1], wt)

    s_lo = lerp(along_t(iv0, is0), along_t(iv0, is1), ws)
    s_hi = lerp(along_t(iv1, is0), along_t(iv1, is1), ws)
    out = lerp(s_lo, s_hi, wv)
    return np.where(bad, np.inf, out)


def interpolate_at(values: np.ndarray, grid: Grid3, v, soc, t=None):
    """Interpolate a (nv, ns, nt) table at arbitrary states."""
    iv, wv = axis_weights(grid.v, v)
    is_, ws = axis_weights(grid.soc, soc)
    if len(grid.t) == 1:
        it, wt = np.zeros(np.shape(v), dtype=np.int64), np.zeros(np.shape(v))
    else:
        it, wt = axis_weights(grid.t, t)
    out = interpolate(values, iv, wv, is_, ws, it, wt)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class ValueTable:
    """Cost-to-go per (position index, v, soc[, t]) with +inf for infeasible nodes.

    ``values[n]`` is the table at route node ``positions[n]``; ``policy``
    stores the argmin candidate index per node (``WAIT``/``NO_CONTROL``
    sentinels included) where available.
    """

    grid: Grid3
    positions: np.ndarray
    values: list
    policy: list | None = None

    def at(self, n: int) -> np.ndarray:
        return self.values[n]

    def lookup(self, n: int, v, soc, t=None):
        return interpolate_at(self.values[n], self.grid, v, soc, t)

    def to_csv(self, file_path) -> None:
        """Long-format export: one row per finite-or-infinite node value."""
        with Path(file_path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "position", "v", "soc", "t", "value"])
            for n, table in enumerate(self.values):
                for i, v in enumerate(self.grid.v):
                    for j, s in enumerate(self.grid.soc):
                        for k, t in enumerate(self.grid.t):
                            w.writerow([n, repr(float(self.positions[n])), repr(float(v)), repr(float(s)),
                                        repr(float(t)), repr(float(table[i, j, k]))])


@dataclass(frozen=True)
class ControlGrid:
    """Engine x BSG torque candidates per velocity.

    The engine axis spans the part of the torque-limit interval that keeps
    the acceleration (with the BSG idle) inside ``[accel_min, accel_max]``
    and always contains 0 (fuel cut).  The BSG axis spans its limits and
    contains 0.  An exact-stop candidate is appended when ``add_stop``.
    Candidates are ordered by engine torque, then by BSG torque magnitude,
    which is the tie-breaking order of the argmin.
    """

    n_eng: int = 15
    n_bsg: int = 9
    accel_min: float = -3.0
    accel_max: float = 2.0
    add_stop: bool = True

    def __post_init__(self):
        if self.n_eng < 2 or self.n_bsg < 1:
            raise ValidationError("controls", "need n_eng >= 2 and n_bsg >= 1")
        if not self.accel_min < 0 < self.accel_max:
            raise ValidationError("controls", "require accel_min < 0 < accel_max")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "ControlGrid":
        return cls(**dict(doc or {}))

    def candidates(self, plant: PlantParams, v: float, dd: float, grade: float = 0.0):
        """(t_eng, t_bsg) arrays for one velocity."""
        lim = torque_limits(plant, v)
        e_lo, e_hi = float(lim["t_eng"][0]), float(lim["t_eng"][1])
        ratio = float(plant.driveline_ratio(v))
        resist = plant.drag_area_coeff * v * v + plant.mass * 9.81 * (
            plant.rolling_coeff * np.cos(grade) + np.sin(grade))
        to_torque = plant.wheel_radius / ratio
        a_lo = (plant.mass * self.accel_min + resist) * to_torque
        a_hi = (plant.mass * self.accel_max + resist) * to_torque
        lo, hi = max(e_lo, a_lo), min(e_hi, a_hi)
        if hi <= lo:
            lo, hi = e_lo, e_hi
        eng = np.linspace(lo, hi, self.n_eng)
        if lo < 0.0 < hi:
            eng[np.argmin(np.abs(eng))] = 0.0
        b_lo, b_hi = float(lim["t_bsg"][0]), float(lim["t_bsg"][1])
        if self.n_bsg == 1:
            bsg = np.zeros(1)
        else:
            bsg = np.linspace(b_lo, b_hi, self.n_bsg)
            bsg[np.argmin(np.abs(bsg))] = 0.0
        te, tb = np.meshgrid(eng, bsg, indexing="ij")
        te, tb = te.ravel(), tb.ravel()
        if self.add_stop and v > 0.0:
            se, sb, ok = stop_control(plant, v, dd, grade)
            if bool(ok):
                te = np.append(te, float(se))
                tb = np.append(tb, float(sb))
        order = np.lexsort((np.abs(tb), te))
        return te[order], tb[order]


@dataclass(frozen=True)
class ExplicitControls:
    """A fixed list of (t_eng, t_bsg) pairs used at every velocity."""

    pairs: tuple

    def candidates(self, plant, v, dd, grade=0.0):
        arr = np.array(self.pairs, dtype=float).reshape(-1, 2)
        order = np.lexsort((np.abs(arr[:, 1]), arr[:, 0]))
        return arr[order, 0], arr[order, 1]
