#!/usr/bin/env python3
"""
Report writer tests: JSON and CSV rendering, atomic writes
"""

import math

import numpy as np
import pytest

from utils.report_tools import emit_report, render_csv, render_json, write_atomic, write_matrix


def test_json_sorted_keys_and_trailing_newline():
    text = render_json({"b": 1, "a": 2})
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")


def test_json_converts_numpy_and_non_finite():
    text = render_json({"x": np.float64(0.5), "n": np.int64(3), "inf": math.inf, "nan": math.nan})
    assert '"x": 0.5' in text
    assert '"n": 3' in text
    assert '"inf": "inf"' in text
    assert '"nan": null' in text


def test_csv_rows_in_column_order():
    rows = [{"delta": 0.1, "transmissions": 5}, {"delta": 0.2, "transmissions": 3}]
    assert render_csv(rows, ("transmissions", "delta")) == "transmissions,delta\n5,0.1\n3,0.2\n"


def test_csv_empty_table_is_header_only():
    assert render_csv([], ("n_devices", "energy_efficiency")) == "n_devices,energy_efficiency\n"


def test_csv_empty_table_needs_columns():
    with pytest.raises(ValueError):
        render_csv([])


def test_csv_float_cells_round_trip():
    value = 1 / 3
    line = render_csv([{"v": value}]).splitlines()[1]
    assert float(line) == value


def test_write_atomic_replaces_file(tmp_path):
    path = tmp_path / "report.json"
    path.write_text("old")
    write_atomic(path, "new\n")
    assert path.read_text() == "new\n"
    assert [p.name for p in tmp_path.iterdir()] == ["report.json"]


def test_write_atomic_missing_directory(tmp_path):
    with pytest.raises(OSError):
        write_atomic(tmp_path / "missing" / "report.json", "x")


def test_emit_report_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        emit_report({"a": 1}, tmp_path / "r.txt", fmt="xml")


def test_write_matrix_headerless(tmp_path):
    path = tmp_path / "m.csv"
    write_matrix(path, [[1.0, 2.0], [3.0, 4.5]])
    assert path.read_text() == "1.0,2.0\n3.0,4.5\n"
