"""JSON evaluation reports.

A report serializes with sorted keys and a fixed layout, so two runs with the
same config and seed give byte-identical files apart from ``created_at``.
"""

from __future__ import annotations

import datetime as _dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1.0"
VOLATILE_FIELDS = ("created_at",)


def to_jsonable(obj):
    """Convert numpy scalars/arrays and non-finite floats (-> None) for JSON."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


@dataclass
class EvaluationReport:
    command: str
    config: dict
    seed: int
    metrics: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    curves: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    schema_version: str = SCHEMA_VERSION
    created_at: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat())

    def to_dict(self) -> dict:
        return to_jsonable({
            "schema_version": self.schema_version, "command": self.command, "config": self.config,
            "seed": self.seed, "metrics": self.metrics, "tables": self.tables, "curves": self.curves,
            "warnings": self.warnings, "created_at": self.created_at,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_json(), encoding="utf-8")
        return path

    @classmethod
    def from_dict(cls, doc: dict) -> "EvaluationReport":
        return cls(doc["command"], doc.get("config", {}), doc.get("seed", 0), doc.get("metrics", {}),
                   doc.get("tables", {}), doc.get("curves", {}), doc.get("warnings", []),
                   doc.get("schema_version", SCHEMA_VERSION), doc.get("created_at", ""))

    @classmethod
    def read(cls, path) -> "EvaluationReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def stable_view(doc: dict) -> dict:
    """Report content without volatile fields, for determinism comparisons."""
    return {k: v for k, v in doc.items() if k not in VOLATILE_FIELDS}


def merge_reports(reports: list[EvaluationReport], seed: int = 0) -> EvaluationReport:
    """Combine several reports into one, sectioned by source command."""
    merged = EvaluationReport("report", {"sources": [r.command for r in reports]}, seed)
    for i, r in enumerate(reports):
        key = f"{i}:{r.command}"
        merged.metrics[key] = r.metrics
        merged.tables[key] = r.tables
        merged.curves[key] = r.curves
        merged.config[key] = {"config": r.config, "seed": r.seed}
        merged.warnings += [f"[{r.command}] {w}" for w in r.warnings]
    return merged
