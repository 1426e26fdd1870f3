"""Forecast container, RMSE metric and the constant-velocity baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation, ValidationError


@dataclass(frozen=True, eq=False)
class TargetForecast:
    """Predicted target velocities on a uniform grid.

    ``velocities[i]`` is the prediction for ``start_time + (i+1)*T`` and is
    held over ``[start_time + i*T, start_time + (i+1)*T)``.
    ``position_offsets`` has one more entry than ``velocities``:
    ``position_offsets[i]`` is the displacement at ``start_time + i*T``.
    """

    start_time: float
    sample_period: float
    velocities: np.ndarray
    position_offsets: np.ndarray

    def __post_init__(self):
        v = np.array(self.velocities, dtype=float)
        off = np.array(self.position_offsets, dtype=float)
        v.setflags(write=False)
        off.setflags(write=False)
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "position_offsets", off)
        if v.ndim != 1 or len(v) == 0:
            raise ValidationError("velocities", "must be a non-empty 1-D sequence")
        if np.any(v < 0):
            raise ValidationError("velocities", "must be >= 0")
        if off.shape != (len(v) + 1,) or off[0] != 0.0 or np.any(np.diff(off) < 0):
            raise ValidationError("position_offsets", "must start at 0, be non-decreasing, length n+1")

    @classmethod
    def from_velocities(cls, start_time: float, velocities, sample_period: float = 1.0) -> "TargetForecast":
        v = np.maximum(np.asarray(velocities, dtype=float), 0.0)
        off = np.concatenate([[0.0], np.cumsum(v * sample_period)])
        return cls(float(start_time), float(sample_period), v, off)

    @property
    def horizon(self) -> float:
        return len(self.velocities) * self.sample_period

    def offset_at(self, t):
        """Displacement since ``start_time``; holds the last velocity past the horizon."""
        t = np.asarray(t, dtype=float)
        n = len(self.velocities)
        rel = np.maximum(t - self.start_time, 0.0)
        i = np.minimum(np.floor(rel / self.sample_period).astype(int), n - 1)
        out = self.position_offsets[i] + self.velocities[i] * (rel - i * self.sample_period)
        return float(out) if out.ndim == 0 else out

    def velocity_at(self, t):
        t = np.asarray(t, dtype=float)
        n = len(self.velocities)
        rel = np.maximum(t - self.start_time, 0.0)
        i = np.minimum(np.floor(rel / self.sample_period).astype(int), n - 1)
        out = self.velocities[i]
        return float(out) if out.ndim == 0 else out


def constant_velocity_forecast(current_v: float, T_p: float, sample_period: float = 1.0,
                               start_time: float = 0.0) -> TargetForecast:
    if current_v < 0:
        raise ContractViolation("current_v must be >= 0")
    n = int(round(T_p / sample_period))
    return TargetForecast.from_velocities(start_time, np.full(n, float(current_v)), sample_period)


def rmse(actual, predicted) -> float:
    actual = np.asarray(actual, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if actual.shape != predicted.shape or actual.size == 0:
        raise ContractViolation(f"length mismatch or empty input: {actual.shape} vs {predicted.shape}")
    return float(np.sqrt(np.mean((actual - predicted) ** 2)))
