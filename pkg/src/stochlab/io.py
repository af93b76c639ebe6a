"""Deterministic CSV and JSON writers."""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np


def format_value(v) -> str:
    """Canonical text for one cell: integers as-is, floats with 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return format(v, ".17g")
    if v is None:
        return ""
    return str(v)


def write_csv(header, rows, filename) -> None:
    """RFC-4180 style CSV with LF line endings; rows are written in the order given."""
    header = list(header)
    try:
        with open(filename, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                row = list(row)
                if len(row) != len(header):
                    raise ValueError(f"row has {len(row)} cells, header has {len(header)}")
                w.writerow([format_value(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {filename}: {exc}") from exc


def read_csv(filename):
    with open(filename, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else format_value(v)
    return v


def write_json(obj, filename) -> None:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True)
    try:
        with open(filename, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {filename}: {exc}") from exc


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path
