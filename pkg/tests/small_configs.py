"""Small scenario, compare and predictor configs written into a temporary directory."""

from __future__ import annotations

import json
from pathlib import Path

from conftest import CONFIGS, MODELS

ROUTE = {
    "name": "short",
    "length": 800.0,
    "distance_step": 10.0,
    "grade": [{"start": 0.0, "value": 0.0}, {"start": 400.0, "value": 0.01}],
    "speed_limits": [{"start": 0.0, "min": 0.0, "max": 14.0}],
    "intersections": [{"position": 300.0,
                       "spat": {"cycle_time": 50.0, "green_start": 0.0, "green_end": 25.0, "offset": 0.0}}],
    "stop_signs": [600.0],
}

SOLVER = {"horizon": 12, "on_infeasible": "brake", "v_max": 15.0, "soc_step": 0.02, "t_span": 80.0, "t_span_first": 30.0,
          "controls": {"n_eng": 7, "n_bsg": 3}}


def write_small_configs(root: Path) -> dict:
    """Write a short route, two scenarios, a compare spec and a predictor job; returns their paths."""
    root = Path(root)
    (root / "route.json").write_text(json.dumps(ROUTE))
    scenario = {"name": "short", "route": "route.json", "plant": str(CONFIGS / "plant_default.json"),
                "model": str(MODELS / "gru_th10_tp20.json"), "predictor": "gru", "departure_time": 20.0,
                "target": {"seed": 3, "headstart": 5, "duration": 300}, "solver": SOLVER}
    (root / "scenario.json").write_text(json.dumps(scenario))
    free = dict(scenario, name="free", predictor="constant", target={"enabled": False})
    free.pop("model")
    (root / "free.json").write_text(json.dumps(free))
    (root / "compare.json").write_text(json.dumps({"scenarios": ["scenario.json"], "predictors": ["gru", "constant"]}))
    job = {"T_h": 5, "T_p": 5, "seed": 1, "routes": ["route.json"],
           "corpus": {"seed": 2, "n_random": 1, "random_length": 1500.0, "n_fixed": 1, "duration": 200},
           "train": {"hidden_dim": 4, "max_epochs": 2, "patience": 2},
           "model": str(MODELS / "gru_th10_tp20.json")}
    (root / "predictor.json").write_text(json.dumps(job))
    return {name: root / f"{name}.json" for name in ("route", "scenario", "free", "compare", "predictor")}
