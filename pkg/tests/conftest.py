"""Shared fixtures: the shipped configs, the default plant and small synthetic routes."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from ecodrive.powertrain import default_plant
from ecodrive.route_world import Intersection, RouteSpec, SpatSchedule

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
MODELS = ROOT / "models"


@pytest.fixture(scope="session")
def plant():
    return default_plant()


@pytest.fixture(scope="session")
def configs_dir():
    return CONFIGS


@pytest.fixture
def flat_route():
    """500 m, no signals, 20 m/s limit."""
    return RouteSpec(length=500.0, distance_step=10.0, speed_limits=((0.0, 0.0, 20.0),), name="flat")


@pytest.fixture
def light_route():
    """1 km with one 60 s signal (green for the first 30 s of each cycle) at 400 m."""
    return RouteSpec(length=1000.0, distance_step=10.0, speed_limits=((0.0, 0.0, 20.0),),
                     intersections=(Intersection(400.0, SpatSchedule(60.0, 0.0, 30.0, 0.0)),), name="one-light")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion, print it, and fail the test if it failed."""
    def record(label: str, ok: bool, detail: str) -> None:
        line = f"{label}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
