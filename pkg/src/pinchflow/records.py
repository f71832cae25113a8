"""Audit records and their CSV / JSON-lines serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields

SERIES_VERSION = 1
SERIES_COLUMNS = ("t", "maxH", "minH", "minRho", "area", "supQ", "cylDecayRatio", "weightedDecay",
                  "cylRatioN1", "gradRatio", "hessRatio", "codimFsigma")


def fmt(x) -> str:
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.12g}"


@dataclass
class MonitorRecord:
    t: float
    maxH: float
    minH: float
    minRho: float
    area: float
    supQ: float
    cylDecayRatio: float
    weightedDecay: float
    cylRatioN1: float
    gradRatio: float
    hessRatio: float
    codimFsigma: float
    flags: list = field(default_factory=list)

    def row(self) -> list[str]:
        return [fmt(getattr(self, c)) for c in SERIES_COLUMNS]

    def finite(self) -> bool:
        return all(math.isfinite(getattr(self, c)) for c in SERIES_COLUMNS) or bool(self.flags)


def write_series(path, records, extra_header: dict | None = None) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(series_text(records, extra_header))


def series_text(records, extra_header: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# series-version: {SERIES_VERSION}\n")
    for k, v in sorted((extra_header or {}).items()):
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_COLUMNS + ("flags",))
    for r in records:
        w.writerow(r.row() + [";".join(r.flags)])
    return buf.getvalue()


def read_series(path) -> list[dict]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = []
    for rec in csv.DictReader(lines):
        flags = rec.pop("flags", "")
        row = {k: float(v) for k, v in rec.items()}
        row["flags"] = [f for f in flags.split(";") if f]
        rows.append(row)
    return rows


def _jsonable(obj):
    if hasattr(obj, "__dataclass_fields__"):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float):
        return float(fmt(obj)) if math.isfinite(obj) else fmt(obj)
    if hasattr(obj, "item"):
        return _jsonable(obj.item())
    return obj


def json_line(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def to_dict(obj) -> dict:
    return _jsonable(asdict(obj)) if hasattr(obj, "__dataclass_fields__") else _jsonable(obj)
