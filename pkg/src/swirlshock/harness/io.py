"""Flat-file output: CSV with 17 significant digits, JSON and JSON lines."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

FLOAT_FORMAT = "%.17g"


def format_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return FLOAT_FORMAT % float(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path, header, rows):
    """RFC-4180 CSV (CRLF line ends, minimal quoting); floats as %.17g."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])
    return path


def write_columns(path, columns: dict):
    """CSV from equal-length 1-d arrays keyed by column name (order kept)."""
    names = list(columns)
    arrs = [np.ravel(np.asarray(columns[k])) for k in names]
    n = {a.size for a in arrs}
    if len(n) > 1:
        raise ValueError(f"columns of unequal length: {dict(zip(names, (a.size for a in arrs)))}")
    rows = zip(*(a.tolist() for a in arrs))
    return write_csv(path, names, rows)


def read_csv(path):
    """Columns of a CSV written by ``write_csv`` as float arrays where possible."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in body]
        try:
            out[name] = np.array([float(x) if x != "" else math.nan for x in col])
        except ValueError:
            out[name] = col
    return out


def to_jsonable(obj):
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
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=False)


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + "\n")
    return path


def append_jsonl(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a") as fh:
        fh.write(json.dumps(to_jsonable(obj)) + "\n")
    return path


def write_jsonl(path, records):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in records:
            fh.write(json.dumps(to_jsonable(r)) + "\n")
    return path
