"""Run record shared by the samplers, diagnostics and the harness."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


def format_float(x):
    """17 significant digits, enough to round-trip any double."""
    return "%.17g" % x


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(float(v))
    if v is None:
        return ""
    return str(v)


def rows_to_csv(rows, columns=None):
    """Render a list of dict rows as CSV text with a header line."""
    if columns is None:
        columns = []
        for row in rows:
            for key in row:
                if key not in columns:
                    columns.append(key)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def matrix_to_csv(M, header=None):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header is not None:
        writer.writerow(header)
    for r in M:
        writer.writerow([format_float(v) for v in r])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    return v


@dataclass
class ExperimentReport:
    """Metrics recorded along one run.

    ``rows`` holds one dict per recorded iteration, ``snapshots`` pairs of
    ``(iteration, positions)``. Everything except ``wall_clock`` is a pure
    function of the configuration and seed.
    """

    config: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    run_id: Optional[str] = None
    tables: dict = field(default_factory=dict)
    final: Optional[object] = field(default=None, repr=False)

    def column(self, name):
        return np.array([row[name] for row in self.rows if name in row], dtype=float)

    def iterations(self):
        return np.array([row["iteration"] for row in self.rows], dtype=int)

    def metrics_csv(self):
        return rows_to_csv(self.rows)

    def summary_json(self):
        payload = {
            "run_id": self.run_id,
            "config": self.config,
            "summary": self.summary,
            "wall_clock_seconds": self.wall_clock,
        }
        return json.dumps(_jsonable(payload), indent=2, sort_keys=True)
