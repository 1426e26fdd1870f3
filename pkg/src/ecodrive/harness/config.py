"""Scenario configuration files.

A scenario is a JSON document; relative file references resolve against
the directory of the document that contains them.  See the README for the
full schema.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import SchemaError, ValidationError
from ..gap import GapConfig
from ..ocp.grid import ControlGrid
from ..route_world import DriverParams, load_json

PREDICTORS = ("gru", "constant")


@dataclass(frozen=True)
class SolverConfig:
    gamma: float = 0.6
    soc_penalty: float = 1e4
    horizon: int = 20
    v_step: float = 1.0
    v_max: float = 20.0
    soc_step: float = 0.01
    soc_window: float = 0.06      # receding-horizon SoC axis half-width
    soc_step_local: float = 0.02  # receding-horizon SoC axis spacing
    t_step: float = 1.0
    t_span: float = 120.0
    t_span_first: float | None = 40.0   # shorter time axis tried first; None always uses t_span
    gap_margin: float = 0.0
    safety_guard: bool = True     # also check the applied step against a braking-target bound
    replan_stride: int = 1
    on_infeasible: str = "abort"  # or "brake"
    controls: ControlGrid = field(default_factory=ControlGrid)
    long_term_controls: ControlGrid | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError("solver.gamma", "must lie in [0, 1]")
        if self.horizon < 1:
            raise ValidationError("solver.horizon", "must be >= 1")
        if self.replan_stride < 1:
            raise ValidationError("solver.replan_stride", "must be >= 1")
        for name in ("v_step", "v_max", "soc_step", "soc_step_local", "t_step", "t_span"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"solver.{name}", "must be > 0")
        if self.t_span_first is not None and not 0 < self.t_span_first <= self.t_span:
            raise ValidationError("solver.t_span_first", "must lie in (0, t_span]")
        if self.soc_window < 0:
            raise ValidationError("solver.soc_window", "must be >= 0")
        if self.on_infeasible not in ("abort", "brake"):
            raise ValidationError("solver.on_infeasible", "must be 'abort' or 'brake'")

    @classmethod
    def from_dict(cls, doc: dict | None) -> "SolverConfig":
        doc = dict(doc or {})
        if "controls" in doc:
            doc["controls"] = ControlGrid.from_dict(doc["controls"])
        if doc.get("long_term_controls") is not None:
            doc["long_term_controls"] = ControlGrid.from_dict(doc["long_term_controls"])
        return cls(**doc)


@dataclass(frozen=True)
class TargetSource:
    """Either a generated IDM driver or a recorded CSV trajectory."""

    csv: Path | None = None
    seed: int = 0
    headstart: float = 5.0
    duration: float = 1800.0
    driver: DriverParams = field(default_factory=DriverParams)
    enabled: bool = True


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    route: Path
    plant: Path
    model: Path | None
    target: TargetSource
    departure_time: float = 0.0
    gap: GapConfig = field(default_factory=GapConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    dsrc_range: float = 300.0
    history_window: float = 10.0
    forecast_horizon: float = 20.0   # constant-velocity baseline; the GRU uses its trained T_p
    initial_soc: float = 0.55
    soc_target: float | None = None
    predictor: str = "gru"
    max_time: float = 3600.0
    source: Path | None = None

    def __post_init__(self):
        if self.predictor not in PREDICTORS:
            raise ValidationError("predictor", f"must be one of {PREDICTORS}")
        if self.predictor == "gru" and self.model is None and self.target.enabled:
            raise ValidationError("model", "the gru predictor needs a model file")
        if not self.dsrc_range > 0:
            raise ValidationError("dsrc_range", "must be > 0")
        if not self.forecast_horizon > 0:
            raise ValidationError("forecast_horizon", "must be > 0")
        if not self.history_window > 0:
            raise ValidationError("history_window", "must be > 0")
        for label, p in (("route", self.route), ("plant", self.plant), ("model", self.model),
                         ("target.csv", self.target.csv)):
            if p is not None and not Path(p).is_file():
                raise ValidationError(label, f"file not found: {p}")

    @property
    def target_soc(self) -> float:
        return self.initial_soc if self.soc_target is None else self.soc_target

    def with_overrides(self, predictor: str | None = None, seed: int | None = None) -> "ScenarioConfig":
        out = self
        if predictor is not None:
            out = replace(out, predictor=predictor)
        if seed is not None:
            out = replace(out, target=replace(out.target, seed=int(seed)))
        return out


def _path(base: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def scenario_from_dict(doc: dict, base: Path, source: Path | None = None) -> ScenarioConfig:
    try:
        tdoc = dict(doc.get("target") or {})
        target = TargetSource(
            csv=_path(base, tdoc.get("csv")),
            seed=int(tdoc.get("seed", 0)),
            headstart=float(tdoc.get("headstart", 5.0)),
            duration=float(tdoc.get("duration", 1800.0)),
            driver=DriverParams.from_dict(tdoc.get("driver")),
            enabled=bool(tdoc.get("enabled", True)),
        )
        return ScenarioConfig(
            name=str(doc.get("name", source.stem if source else "scenario")),
            route=_path(base, doc["route"]),
            plant=_path(base, doc["plant"]),
            model=_path(base, doc.get("model")),
            target=target,
            departure_time=float(doc.get("departure_time", 0.0)),
            gap=GapConfig(**dict(doc.get("gap") or {})),
            solver=SolverConfig.from_dict(doc.get("solver")),
            dsrc_range=float(doc.get("dsrc_range", 300.0)),
            history_window=float(doc.get("history_window", 10.0)),
            forecast_horizon=float(doc.get("forecast_horizon", 20.0)),
            initial_soc=float(doc.get("initial_soc", 0.55)),
            soc_target=None if doc.get("soc_target") is None else float(doc["soc_target"]),
            predictor=str(doc.get("predictor", "gru" if doc.get("model") else "constant")),
            max_time=float(doc.get("max_time", 3600.0)),
            source=source,
        )
    except KeyError as exc:
        raise SchemaError(f"missing key {exc.args[0]!r}", path=source, field=exc.args[0]) from exc
    except TypeError as exc:
        raise SchemaError(f"bad value: {exc}", path=source) from exc


def load_scenario(file_path) -> ScenarioConfig:
    path = Path(file_path)
    doc = load_json(path)
    if not isinstance(doc, dict):
        raise SchemaError("scenario must be a JSON object", path=path)
    return scenario_from_dict(doc, path.parent, path)


def load_config_document(file_path) -> dict:
    doc = load_json(file_path)
    if not isinstance(doc, dict):
        raise SchemaError("config must be a JSON object", path=file_path)
    return doc


def dumps(doc) -> str:
    """Canonical JSON used for every emitted file (sorted keys, repr floats)."""
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n"
