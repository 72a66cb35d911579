"""Report and curve serialization.

JSON floats use Python's shortest round-trip representation (at most 17
significant digits); CSV floats are written with ``%.17g``.  Non-finite
numbers become ``null`` in JSON and ``nan``/``inf`` in CSV.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .llreg import LocalLinearCurve

__all__ = [
    "to_jsonable",
    "dumps_report",
    "write_report",
    "read_report",
    "write_curve_csv",
    "read_curve_csv",
    "write_rows_csv",
    "format_float",
]


def format_float(x) -> str:
    return "%.17g" % float(x)


def to_jsonable(obj):
    """Recursively convert numpy values; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dumps_report(obj) -> str:
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_report(obj), encoding="utf-8")
    return path


def read_report(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _grid_names(r):
    return ["v"] if r == 1 else [f"v{j + 1}" for j in range(r)]


def write_curve_csv(path, curve: LocalLinearCurve) -> Path:
    """Columns: grid coordinate(s), theta_hat, se, ess, n_local, flag."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    r = curve.grid.shape[1]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_grid_names(r) + ["theta_hat", "se", "ess", "n_local", "flag"])
        for j in range(len(curve)):
            w.writerow(
                [format_float(g) for g in curve.grid[j]]
                + [format_float(curve.theta_hat[j]), format_float(curve.se[j]), format_float(curve.ess[j])]
                + [int(curve.n_local[j]), curve.flags[j]]
            )
    return path


def read_curve_csv(path) -> dict:
    """Inverse of :func:`write_curve_csv`: a dict of column arrays (flags as strings)."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    cols = {name: [row[j] for row in body] for j, name in enumerate(header)}
    out = {}
    for name, vals in cols.items():
        if name == "flag":
            out[name] = list(vals)
        elif name == "n_local":
            out[name] = np.array([int(v) for v in vals], dtype=int)
        else:
            out[name] = np.array([float(v) for v in vals])
    return out


def write_rows_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path
