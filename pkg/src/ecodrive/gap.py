"""Ego-target relative distance and the car-following safety envelope."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, ValidationError


@dataclass(frozen=True)
class GapConfig:
    d0: float = 2.0          # standstill gap, m
    t_gap: float = 1.5       # time gap, s
    a_max: float = 2.0       # m/s^2
    b_max: float = 3.0       # m/s^2
    d_radar: float = 250.0   # sensing range, m

    def __post_init__(self):
        for name in ("d0", "t_gap", "a_max", "b_max", "d_radar"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"gap.{name}", "must be > 0")
        if not self.d_radar > self.d0:
            raise ValidationError("gap.d_radar", "must exceed d0")


def gap_update(d_gap: float, v_target_avg: float, v_ego_avg: float, dd: float) -> float:
    """One spatial step of the relative-distance recursion."""
    if not v_ego_avg > 0:
        raise ContractViolation("ego mean velocity must be > 0; use gap_at for standstill")
    if not dd > 0:
        raise ContractViolation("dd must be > 0")
    return d_gap + (v_target_avg / v_ego_avg - 1.0) * dd


def target_position_at(forecast, t, t_ref=None):
    """Target displacement from ``t_ref`` (default: forecast start) to ``t``.

    ``forecast.velocities[i]`` is held over ``[start + i*T, start + (i+1)*T)``;
    past the last sample the last velocity is held.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < forecast.start_time - 1e-12):
        raise ContractViolation("query time precedes the forecast start")
    out = forecast.offset_at(t)
    if t_ref is not None:
        out = out - forecast.offset_at(t_ref)
    return float(out) if np.ndim(out) == 0 else out


def gap_at(initial_gap: float, forecast, ego_position_delta, t_ego, t_ref=None):
    """Closed-form gap: initial gap plus target travel minus ego travel since ``t_ref``."""
    return initial_gap + target_position_at(forecast, t_ego, t_ref) - np.asarray(ego_position_delta)


def safe_distance(cfg: GapConfig, v_ego_next, dv):
    """IDM-style desired gap; ``dv`` is the closing speed (ego minus target).

    Floored at ``d0`` so that an opening gap never permits less than the
    standstill spacing.
    """
    v = np.asarray(v_ego_next, dtype=float)
    if np.any(v < 0):
        raise ContractViolation("v_ego_next must be >= 0")
    d = cfg.d0 + v * cfg.t_gap + v * np.asarray(dv, dtype=float) / (2.0 * math.sqrt(cfg.a_max * cfg.b_max))
    out = np.maximum(d, cfg.d0)
    return float(out) if np.ndim(out) == 0 else out


def gap_feasible(cfg: GapConfig, gap, d_safe):
    """Closed-interval membership ``d_safe <= gap <= d_radar``."""
    out = (np.asarray(gap) >= d_safe) & (np.asarray(gap) <= cfg.d_radar)
    return bool(out) if np.ndim(out) == 0 else out


def follower_constraint_ok(cfg: GapConfig, gap, d_safe):
    """Constraint as enforced by the controller: beyond radar range the target is ignored."""
    gap = np.asarray(gap)
    out = (gap > cfg.d_radar) | (gap >= d_safe)
    return bool(out) if np.ndim(out) == 0 else out
