"""Batch comparison of predictor variants over several scenarios and seeds."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import EcoDriveError, SchemaError, ValidationError
from ..predictor.gru import load_model
from .config import PREDICTORS, ScenarioConfig, load_config_document, load_scenario
from .simulate import simulate

log = logging.getLogger(__name__)

ROW_COLUMNS = ("scenario", "seed", "predictor", "status", "fuel_consumed", "travel_time", "final_soc",
               "lights_on_green", "lights_total", "violations", "fallbacks")
SAFETY_KINDS = ("collision", "gap", "red_light", "stop_sign")


@dataclass
class ComparisonTable:
    rows: list
    variants: tuple
    means: dict = field(default_factory=dict)
    deltas: dict = field(default_factory=dict)   # percent vs the first variant
    reports: list = field(default_factory=list)

    @property
    def complete(self) -> bool:
        return all(r["status"] == "ok" for r in self.rows)

    def safety_violations(self) -> int:
        return sum(sum(1 for v in rep.violations if v["kind"] in SAFETY_KINDS) for rep in self.reports)

    def to_dict(self) -> dict:
        return {"variants": list(self.variants), "rows": self.rows, "means": self.means, "deltas_percent": self.deltas,
                "complete": self.complete}


@dataclass(frozen=True)
class CompareSpec:
    scenarios: tuple
    predictors: tuple = PREDICTORS
    seeds: tuple | None = None


def load_compare_spec(file_path) -> CompareSpec:
    path = Path(file_path)
    doc = load_config_document(path)
    if "scenarios" not in doc or not doc["scenarios"]:
        raise SchemaError("needs a non-empty 'scenarios' list", path=path, field="scenarios")
    scenarios = tuple(load_scenario(p if Path(p).is_absolute() else path.parent / p) for p in doc["scenarios"])
    preds = tuple(doc.get("predictors", PREDICTORS))
    for p in preds:
        if p not in PREDICTORS:
            raise ValidationError("predictors", f"unknown predictor {p!r}")
    seeds = doc.get("seeds")
    return CompareSpec(scenarios, preds, None if seeds is None else tuple(int(s) for s in seeds))


def compare(configs, seeds=None, variants=PREDICTORS) -> ComparisonTable:
    """Run every scenario x seed x predictor combination.

    ``seeds`` overrides each scenario's target seed; ``None`` keeps the
    scenario's own.  A failed run leaves a row with ``status`` set to the
    error and NaN metrics; means use the successful runs only.
    """
    if seeds is not None and len(seeds) == 0:
        raise ValidationError("seeds", "need at least one seed")
    configs = list(configs)
    seed_list = [None] if seeds is None else list(seeds)
    models = {}
    rows, reports = [], []
    for cfg in configs:
        for seed in seed_list:
            for variant in variants:
                row = {"scenario": cfg.name, "seed": cfg.target.seed if seed is None else seed, "predictor": variant}
                try:
                    run_cfg: ScenarioConfig = cfg.with_overrides(predictor=variant, seed=seed)
                    model = None
                    if variant == "gru" and run_cfg.model is not None:
                        key = str(run_cfg.model)
                        if key not in models:
                            models[key] = load_model(run_cfg.model)
                        model = models[key]
                    rep = simulate(run_cfg, model=model)
                except EcoDriveError as exc:
                    log.error("run %s/%s/%s failed: %s", row["scenario"], row["seed"], variant, exc)
                    row.update(status=f"failed: {type(exc).__name__}", fuel_consumed=math.nan,
                               travel_time=math.nan, final_soc=math.nan, lights_on_green=0, lights_total=0,
                               violations=0, fallbacks=0)
                    rows.append(row)
                    continue
                s = rep.summary()
                row.update(status="ok", **{k: s[k] for k in ROW_COLUMNS[4:]})
                rows.append(row)
                reports.append(rep)
    table = ComparisonTable(rows, tuple(variants), reports=reports)
    for variant in variants:
        ok = [r for r in rows if r["predictor"] == variant and r["status"] == "ok"]
        table.means[variant] = {
            "fuel_consumed": _mean([r["fuel_consumed"] for r in ok]),
            "travel_time": _mean([r["travel_time"] for r in ok]),
            "final_soc": _mean([r["final_soc"] for r in ok]),
            "runs": len(ok),
        }
    ref = table.means[variants[0]]
    for variant in variants[1:]:
        m = table.means[variant]
        table.deltas[variant] = {k: _pct(m[k], ref[k]) for k in ("fuel_consumed", "travel_time")}
    return table


def _mean(xs):
    return math.fsum(xs) / len(xs) if xs else math.nan


def _pct(x, ref):
    return 100.0 * (x - ref) / ref if ref and math.isfinite(ref) and math.isfinite(x) else math.nan
