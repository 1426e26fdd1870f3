"""Serialisation of scenario reports and comparison tables."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .config import dumps
from .simulate import TRACE_COLUMNS, ScenarioReport

FORMATS = ("csv", "json")
TEXT_COLUMNS = ("signal_phase", "event")
INT_COLUMNS = ("step", "node")


def _clean(x):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def _cell(x):
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_json(doc, path) -> None:
    path = Path(path)
    try:
        path.write_text(dumps(_clean(doc)))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def write_rows(path, columns, rows) -> None:
    """CSV with a fixed header; floats written with ``repr`` so they round-trip exactly."""
    path = Path(path)
    try:
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for row in rows:
                w.writerow([_cell(row[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def summary_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".summary.json")


def emit_report(report: ScenarioReport, fmt: str, path) -> list:
    """Write ``report`` as CSV (trace, plus a JSON summary sidecar) or as one JSON document.

    Returns the paths written.
    """
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    path = Path(path)
    doc = {"summary": report.summary(), "violations": report.violations}
    if fmt == "json":
        doc["trace"] = [{c: row[c] for c in TRACE_COLUMNS} for row in report.trace]
        write_json(doc, path)
        return [path]
    write_rows(path, TRACE_COLUMNS, report.trace)
    side = summary_path(path)
    write_json(doc, side)
    return [path, side]


def read_trace_csv(path) -> list:
    """Parse a trace written by :func:`emit_report` back into row dicts."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        parsed = {}
        for k, v in row.items():
            if k in TEXT_COLUMNS:
                parsed[k] = v
            elif k in INT_COLUMNS:
                parsed[k] = int(v)
            else:
                parsed[k] = float(v)
        out.append(parsed)
    return out


def read_json(path):
    return json.loads(Path(path).read_text())
