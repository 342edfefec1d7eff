"""Run reports: tables, verdicts, the content hash and the on-disk layout.

Floats are written with 17 significant digits in CSV files; JSON uses the
shortest round-tripping representation.  The report hash covers everything
except the wall-clock time.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import platform
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = ["Table", "RunReport", "build_id", "write_outputs", "fmt"]


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _plain(v):
    """Convert numpy containers and scalars into JSON-friendly Python values."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (np.floating, float)):
        return float(v)
    return v


@dataclass
class Table:
    columns: list
    rows: list

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([fmt(v) for v in r])

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


@dataclass
class RunReport:
    """Everything one experiment produced.

    ``ladders`` lists plot descriptions ``{"name", "table", "x", "y",
    "series", "order", "loglog"}`` consumed by :func:`zakai.harness.plots.emit_plots`.
    """

    kind: str
    config_hash: str
    seed: int
    config: dict
    build_id: str
    tables: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    orders: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    per_path: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    ladders: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["tables"] = {k: {"columns": t.columns, "rows": t.rows} for k, t in self.tables.items()}
        d["passed"] = self.passed
        return _plain(d)

    def content_hash(self) -> str:
        d = self.as_dict()
        d.pop("wall_clock")
        d["config"] = {k: v for k, v in d["config"].items() if k != "out"}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), allow_nan=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def lines(self) -> list:
        out = []
        for c in self.checks:
            tag = "PASS" if c["passed"] else "FAIL"
            v = c["value"]
            vs = f"{v:.6g}" if isinstance(v, float) and math.isfinite(v) else str(v)
            out.append(f"{tag} {c['name']}: {vs} ({c['threshold']})")
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        d.pop("passed", None)
        d["tables"] = {k: Table(t["columns"], t["rows"]) for k, t in d["tables"].items()}
        return cls(**d)


def build_id() -> str:
    """Package, interpreter and numerics library versions."""
    import scipy

    from importlib.metadata import PackageNotFoundError, version

    try:
        pkg = version("artifact")
    except PackageNotFoundError:
        pkg = "dev"
    return f"zakai-{pkg}/py{platform.python_version()}/numpy{np.__version__}/scipy{scipy.__version__}"


def write_outputs(report: RunReport, out_dir, started_at: str) -> dict:
    """Write ``<table>.csv``, ``report.json`` and ``manifest.json`` into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    files = []
    for name, table in report.tables.items():
        path = os.path.join(out_dir, f"{name}.csv")
        table.write_csv(path)
        files.append(os.path.basename(path))
    rep = report.as_dict()
    rep["report_hash"] = report.content_hash()
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True)
    manifest = {
        "config_hash": report.config_hash,
        "master_seed": report.seed,
        "build_id": report.build_id,
        "started_at": started_at,
        "config": _plain(report.config),
        "experiments": [
            {
                "kind": report.kind,
                "report_hash": rep["report_hash"],
                "passed": report.passed,
                "tables": files,
                "report": "report.json",
            }
        ],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest
