"""Feature construction: velocity, acceleration and distance to the next signal."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractViolation, ValidationError

log = logging.getLogger(__name__)

OUT_OF_RANGE_DISTANCE = 500.0
MIN_DISTANCE = 0.1
FEATURES = ("v", "a", "d_tl")


def target_distance_to_light(d_tl_ego: float, d_gap: float, dsrc_range: float) -> float:
    """Target's distance to the signal the ego hears over V2I.

    Outside the communication range the sentinel 500 m is returned.  If the
    target is already past the stop bar the value is clamped to a small
    positive distance.
    """
    if d_gap < 0:
        raise ContractViolation("d_gap must be >= 0")
    if d_tl_ego >= dsrc_range:
        return OUT_OF_RANGE_DISTANCE
    d = d_tl_ego - d_gap
    if d <= 0.0:
        log.info("target past the signal (d_tl_ego=%.2f, gap=%.2f); clamping to %.2f m",
                 d_tl_ego, d_gap, MIN_DISTANCE)
        return MIN_DISTANCE
    return min(d, OUT_OF_RANGE_DISTANCE)


def own_distance_to_light(route, position, dsrc_range: float):
    """Distance from ``position`` to the next signal ahead, with the 500 m sentinel."""
    pos = np.atleast_1d(np.asarray(position, dtype=float))
    lights = np.array([i.position for i in route.intersections]) if route.intersections else np.zeros(0)
    out = np.full(pos.shape, OUT_OF_RANGE_DISTANCE)
    if len(lights):
        idx = np.searchsorted(lights, pos, side="right")
        has = idx < len(lights)
        d = np.where(has, lights[np.minimum(idx, len(lights) - 1)] - pos, np.inf)
        inside = has & (d < dsrc_range)
        out = np.where(inside, np.clip(d, MIN_DISTANCE, OUT_OF_RANGE_DISTANCE), out)
    return out if np.ndim(position) else float(out[0])


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-feature min-max bounds; index 0 (velocity) also scales the targets."""

    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        mins = np.array(self.mins, dtype=float)
        maxs = np.array(self.maxs, dtype=float)
        if mins.shape != maxs.shape or np.any(maxs <= mins):
            raise ValidationError("normalizer", "require min < max for every feature")
        object.__setattr__(self, "mins", mins)
        object.__setattr__(self, "maxs", maxs)

    @classmethod
    def fit(cls, features: np.ndarray) -> "Normalizer":
        flat = np.asarray(features, dtype=float).reshape(-1, features.shape[-1])
        mins = flat.min(axis=0)
        maxs = flat.max(axis=0)
        maxs = np.where(maxs - mins < 1e-6, mins + 1.0, maxs)
        return cls(mins, maxs)

    def normalize(self, x):
        return np.clip((np.asarray(x, dtype=float) - self.mins) / (self.maxs - self.mins), 0.0, 1.0)

    def denormalize(self, z):
        return self.mins + np.asarray(z, dtype=float) * (self.maxs - self.mins)

    def normalize_velocity(self, v):
        return np.clip((np.asarray(v, dtype=float) - self.mins[0]) / (self.maxs[0] - self.mins[0]), 0.0, 1.0)

    def denormalize_velocity(self, z):
        return self.mins[0] + np.asarray(z, dtype=float) * (self.maxs[0] - self.mins[0])


@dataclass(frozen=True, eq=False)
class WindowPair:
    history: np.ndarray       # (T_h, 3) raw features
    future: np.ndarray        # (T_p,) raw velocities
    source: int = 0
    start: int = 0


def trajectory_features(trajectory, route, dsrc_range: float) -> np.ndarray:
    """(N, 3) array of [v, a, d_tl] per sample.

    Acceleration is the backward difference, i.e. what an observer can
    measure at that instant without seeing the next sample.
    """
    v = np.asarray(trajectory.v, dtype=float)
    a = np.zeros_like(v)
    a[1:] = np.diff(v) / trajectory.sample_period
    d = own_distance_to_light(route, trajectory.position, dsrc_range) if route is not None \
        else np.full_like(v, OUT_OF_RANGE_DISTANCE)
    return np.column_stack([v, a, d])


def make_windows(trajectory, route, T_h: float, T_p: float, dsrc_range: float = 300.0,
                 source: int = 0) -> list[WindowPair]:
    """Stride-1 sliding (history, future) pairs; empty if the trajectory is too short."""
    dt = trajectory.sample_period
    nh, npred = int(round(T_h / dt)), int(round(T_p / dt))
    feats = trajectory_features(trajectory, route, dsrc_range)
    n = len(feats)
    count = n - (nh + npred) + 1
    if nh < 1 or npred < 1 or count <= 0:
        return []
    v = feats[:, 0]
    return [WindowPair(feats[i:i + nh].copy(), v[i + nh:i + nh + npred].copy(), source, i)
            for i in range(count)]


def stack_windows(windows) -> tuple[np.ndarray, np.ndarray]:
    if not windows:
        raise ContractViolation("no windows")
    return (np.stack([w.history for w in windows]), np.stack([w.future for w in windows]))
