from __future__ import annotations

import json

import numpy as np
import pytest

from closurerec.completion import CompletionConfig
from closurerec.domain import DataError, PerformanceMatrix
from closurerec.io import (
    AGGREGATE_COLUMNS,
    CELL_COLUMNS,
    EXPERIMENT_COLUMNS,
    fmt,
    format_matrix_csv,
    load_bundle,
    parse_matrix_csv,
    read_json,
    report_tables,
    save_bundle,
    save_report,
)
from closurerec.protocol import CVConfig, CVReport, HyperGrid, run_nested_cv
from closurerec.synth import SynthConfig, generate_synthetic


def test_fmt():
    assert fmt(None) == "" and fmt(float("nan")) == ""
    assert fmt(True) == "true" and fmt(np.bool_(False)) == "false"
    assert fmt(np.int64(3)) == "3"
    assert float(fmt(0.1 + 0.2)) == 0.1 + 0.2


def test_empty_cell_is_missing():
    m = parse_matrix_csv("item_id,c1,c2\na,0.5,\nb,,0.25\n")
    assert m.observed.tolist() == [[True, False], [False, True]]
    assert m.entry("a", "c2") is None and m.entry("b", "c2") == 0.25


def test_matrix_round_trip_exact():
    vals = np.random.default_rng(0).uniform(size=(4, 3))
    vals[1, 2] = np.nan
    m = PerformanceMatrix(vals, ["a", "b", "c", "d"], ["x", "y", "z"])
    assert parse_matrix_csv(format_matrix_csv(m)) == m


@pytest.mark.parametrize(
    "text, where",
    [
        ("item_id,c1,c2\na,0.5,oops\n", "line 2, column 3"),
        ("item_id,c1\na,0.5\nb,inf\n", "line 3, column 2"),
        ("item_id,c1,c2\na,0.5\n", "line 2"),
        ("item_id\na\n", "line 1"),
        ("", "empty"),
    ],
)
def test_parse_errors_cite_location(text, where):
    with pytest.raises(DataError, match=where):
        parse_matrix_csv(text, "m.csv")


def test_read_json_error_location(tmp_path):
    p = tmp_path / "b.json"
    p.write_text('{\n  "a": 1,\n  oops\n}\n')
    with pytest.raises(DataError, match="line 3, column 3"):
        read_json(p)


def _bundle():
    return generate_synthetic(SynthConfig(n_items=6, n_cases=12, n_experiments=4, noise_sd=0.05))


def test_bundle_round_trip(tmp_path):
    b = _bundle()
    save_bundle(b, tmp_path / "m.csv", tmp_path / "b.json")
    assert load_bundle(tmp_path / "m.csv", tmp_path / "b.json") == b


def test_bundle_missing_case_errors(tmp_path):
    b = _bundle()
    save_bundle(b, tmp_path / "m.csv", tmp_path / "b.json")
    doc = json.loads((tmp_path / "b.json").read_text())
    gone = doc["features"].pop()["case_id"]
    (tmp_path / "b.json").write_text(json.dumps(doc))
    with pytest.raises(DataError, match=gone):
        load_bundle(tmp_path / "m.csv", tmp_path / "b.json")


def test_bundle_missing_experiments_errors(tmp_path):
    b = _bundle()
    save_bundle(b, tmp_path / "m.csv", tmp_path / "b.json")
    doc = json.loads((tmp_path / "b.json").read_text())
    del doc["experiments"]
    (tmp_path / "b.json").write_text(json.dumps(doc))
    with pytest.raises(DataError, match="experiments"):
        load_bundle(tmp_path / "m.csv", tmp_path / "b.json")


def test_bundle_out_of_range_value_errors(tmp_path):
    b = _bundle()
    save_bundle(b, tmp_path / "m.csv", tmp_path / "b.json")
    text = (tmp_path / "m.csv").read_text().splitlines()
    cells = text[1].split(",")
    cells[1] = "1.5"
    text[1] = ",".join(cells)
    (tmp_path / "m.csv").write_text("\n".join(text) + "\n")
    with pytest.raises(DataError, match="invalid matrix"):
        load_bundle(tmp_path / "m.csv", tmp_path / "b.json")


def _report():
    b = _bundle()
    cfg = CVConfig(sparsity_levels=(0.5,), n_realisations=2, grid=HyperGrid(k_values=(1, 2)),
                   completion=CompletionConfig(method="soft_impute", rank=2, max_iterations=50))
    return run_nested_cv(b.matrix, b.features, b.experiments, cfg, schema=b.schema, reference_item=b.reference_item)


def test_report_files_byte_stable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    save_report(_report(), a)
    save_report(_report(), b)
    for name in ("cells.csv", "aggregate.csv", "experiments.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    man = json.loads((a / "manifest.json").read_text())
    assert man["leakage_audit"] is True
    assert man["grid_size"] == 6
    assert CVConfig.from_json(man["config"]) == _report().config


def test_report_table_shapes():
    rep = _report()
    t = report_tables(rep)
    cells = t["cells.csv"].splitlines()
    assert cells[0].split(",") == list(CELL_COLUMNS)
    assert len(cells) == 1 + len(rep.cells)
    assert len(t["aggregate.csv"].splitlines()) == 1 + 5
    assert len(t["experiments.csv"].splitlines()) == 1 + 4


def test_empty_report_writes_headers_only():
    rep = CVReport(CVConfig(), ())
    t = report_tables(rep)
    assert t["cells.csv"] == ",".join(CELL_COLUMNS) + "\n"
    assert t["aggregate.csv"] == ",".join(AGGREGATE_COLUMNS) + "\n"
    assert t["experiments.csv"] == ",".join(EXPERIMENT_COLUMNS) + "\n"
