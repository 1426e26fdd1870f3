"""Synthetic target-driver corpora for training and evaluating the predictor."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..route_world import DriverParams, RouteSpec, gen_target_trajectory, random_route
from .features import make_windows


@dataclass(frozen=True)
class CorpusSpec:
    """Which drives to generate.

    ``n_random`` drives run on freshly drawn random corridors; ``n_fixed``
    drives per entry of ``routes`` run on those routes with random
    departure times in ``[0, departure_spread)``.  Every drive gets its own
    seed derived from ``seed``.
    """

    seed: int = 0
    n_random: int = 12
    random_length: float = 4000.0
    n_fixed: int = 0
    duration: float = 600.0
    departure_spread: float = 600.0
    driver: DriverParams = field(default_factory=DriverParams)

    def __post_init__(self):
        if self.n_random < 0 or self.n_fixed < 0:
            raise ValidationError("corpus", "drive counts must be >= 0")
        if not self.duration > 0:
            raise ValidationError("corpus.duration", "must be > 0")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "CorpusSpec":
        doc = dict(doc or {})
        if "driver" in doc:
            doc["driver"] = DriverParams.from_dict(doc["driver"])
        return cls(**doc)

    @property
    def total_hours(self) -> float:
        return self.duration * self.n_random / 3600.0


def build_corpus(spec: CorpusSpec, routes: tuple = ()) -> list:
    """List of ``(route, trajectory)`` drives, deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    drives = []
    for _ in range(spec.n_random):
        route_seed, drive_seed = (int(s) for s in rng.integers(2**31, size=2))
        route = random_route(route_seed, length=spec.random_length)
        depart = float(np.round(rng.uniform(0.0, spec.departure_spread)))
        drives.append((route, gen_target_trajectory(route, depart, spec.driver, spec.duration, drive_seed)))
    for route in routes:
        for _ in range(spec.n_fixed):
            drive_seed = int(rng.integers(2**31))
            depart = float(np.round(rng.uniform(0.0, spec.departure_spread)))
            drives.append((route, gen_target_trajectory(route, depart, spec.driver, spec.duration, drive_seed)))
    if not drives:
        raise ValidationError("corpus", "spec produces no drives")
    return drives


def corpus_windows(drives: list, T_h: float, T_p: float, dsrc_range: float = 300.0) -> list:
    """Sliding windows of every drive, tagged with the drive index as ``source``."""
    out = []
    for i, (route, traj) in enumerate(drives):
        out.extend(make_windows(traj, route, T_h, T_p, dsrc_range, source=i))
    return out


def corpus_seconds(drives: list) -> float:
    return float(sum(traj.t[-1] - traj.t[0] for _, traj in drives))
