"""
Report writers for run metrics and sweep tables.

Files are written to a temporary sibling first and renamed into place, so a
reader never sees a half-written report.
"""

import csv
import io
import json
import logging
import math
import os
import tempfile
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

FORMATS = ("json", "csv")


def _plain(value):
    """Convert numpy scalars and non-finite floats into JSON-safe values"""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None if math.isnan(value) else ("inf" if value > 0 else "-inf")
    return value


def _cell(value):
    value = _plain(value)
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return json.dumps(value)
    return str(value)


def render_json(data):
    if hasattr(data, "to_dict"):
        data = data.to_dict()
    return json.dumps(_plain(data), sort_keys=True, indent=2) + "\n"


def render_csv(data, columns=None):
    """
    One header row, then one row per record.

    A single metrics object is written as a one-row table. With no records the
    file holds only the header, which needs `columns`.
    """
    if hasattr(data, "to_dict"):
        data = data.to_dict()
    rows = [data] if isinstance(data, dict) else list(data)
    if columns is None:
        if not rows:
            raise ValueError("an empty table needs explicit columns")
        columns = list(rows[0].keys())

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buffer.getvalue()


def write_atomic(path, text):
    path = Path(path)
    if not path.parent.is_dir():
        raise OSError(f"output directory does not exist: {path.parent}")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise OSError(f"could not write {path}: {exc}") from exc


def emit_report(data, path, fmt="json", columns=None):
    """Write metrics (or a list of row dicts) to `path` as JSON or CSV"""
    if fmt not in FORMATS:
        raise ValueError(f"unknown report format {fmt!r}, expected one of {FORMATS}")
    text = render_json(data) if fmt == "json" else render_csv(data, columns)
    write_atomic(path, text)
    logger.debug("wrote %s report to %s", fmt, path)


def write_matrix(path, matrix):
    """Write a matrix as headerless CSV, one row per tick"""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    for row in matrix:
        writer.writerow([repr(float(v)) for v in row])
    write_atomic(path, buffer.getvalue())
