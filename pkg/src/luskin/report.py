"""Run reports: a JSON document plus CSV renderings of its table blocks."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__


def jsonify(value):
    """Recursively coerce to plain JSON types (tuples to lists, numpy to python)."""
    if isinstance(value, dict):
        return {str(k): jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonify(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonify(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


@dataclass
class ReportDocument:
    """Complete record of one command run; serializes losslessly to JSON."""

    command: str
    config: dict
    metrics: dict
    tables: dict = field(default_factory=dict)
    version: str = __version__

    def __post_init__(self):
        self.config = jsonify(self.config)
        self.metrics = jsonify(self.metrics)
        self.tables = jsonify(self.tables)

    def to_json(self) -> str:
        doc = {
            "command": self.command,
            "version": self.version,
            "config": self.config,
            "metrics": self.metrics,
            "tables": self.tables,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ReportDocument":
        doc = json.loads(text)
        return cls(
            command=doc["command"],
            config=doc["config"],
            metrics=doc["metrics"],
            tables=doc.get("tables", {}),
            version=doc["version"],
        )


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(doc: ReportDocument, out_dir) -> list[str]:
    """Write report.json plus one CSV per table block; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w", encoding="utf-8") as fh:
        fh.write(doc.to_json())
    paths.append(report_path)
    for name, rows in doc.tables.items():
        csv_path = os.path.join(out_dir, f"{name}.csv")
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            if rows:
                columns = list(rows[0].keys())
                fh.write(",".join(columns) + "\n")
                for row in rows:
                    fh.write(",".join(_format_cell(row[c]) for c in columns) + "\n")
        paths.append(csv_path)
    return paths
