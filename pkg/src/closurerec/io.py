"""On-disk formats: matrix CSV, bundle JSON, report CSVs and the run manifest.

Matrix CSV: the header row holds case ids after one leading label cell,
every following row starts with an item id, and an empty cell is a missing
entry. The bundle JSON carries the feature schema, per-case features, the
experiment map, an optional reference item and free-form generator metadata.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, Sequence

import numpy as np

from .domain import DataError, ExperimentMap, PerformanceMatrix, validate_matrix
from .features import CaseFeatures, CaseFeatureTable, FeatureSchema

if TYPE_CHECKING:
    from .protocol import CVReport

CELL_COLUMNS = (
    "sparsity", "realisation", "experiment", "method", "metric", "k",
    "rr@1", "rr@3", "regret", "val_mrr@3", "val_mrr@1", "n_cases", "leakage_ok",
)
AGGREGATE_COLUMNS = (
    "sparsity", "method", "n_samples",
    "mrr@1", "mrr@1_lo", "mrr@1_hi",
    "mrr@3", "mrr@3_lo", "mrr@3_hi",
    "regret", "regret_lo", "regret_hi",
)
EXPERIMENT_COLUMNS = (
    "sparsity", "experiment", "metric", "k",
    "rr@1", "rr@1_lo", "rr@1_hi", "rr@3", "rr@3_lo", "rr@3_hi",
    "val_mrr@3", "val_mrr@1",
)
CI_METHOD = "normal approximation, 95%"


@dataclass
class DatasetBundle:
    matrix: PerformanceMatrix
    features: CaseFeatureTable
    schema: FeatureSchema
    experiments: ExperimentMap
    reference_item: str | None = None
    meta: dict = field(default_factory=dict)

    def check(self) -> None:
        """Raise :class:`DataError` unless the matrix is valid and ids agree everywhere."""
        report = validate_matrix(self.matrix)
        if not report.ok:
            shown = "; ".join(f"{loc}: {msg}" for loc, msg in report.issues[:10])
            more = f" (+{len(report.issues) - 10} more)" if len(report.issues) > 10 else ""
            raise DataError(f"invalid matrix: {shown}{more}")
        cases = set(self.matrix.case_ids)
        no_feat = sorted(cases - set(self.features))
        if no_feat:
            raise DataError(f"cases in matrix without features: {no_feat}")
        extra_feat = sorted(set(self.features) - cases)
        if extra_feat:
            raise DataError(f"features for cases not in matrix: {extra_feat}")
        no_exp = sorted(cases - set(self.experiments.assignments))
        if no_exp:
            raise DataError(f"cases in matrix without an experiment: {no_exp}")
        extra_exp = sorted(set(self.experiments.assignments) - cases)
        if extra_exp:
            raise DataError(f"experiment map lists cases not in matrix: {extra_exp}")
        for f in self.features.values():
            f.check(self.schema)
        if self.reference_item is not None and self.reference_item not in self.matrix.item_ids:
            raise DataError(f"reference item {self.reference_item!r} not in the matrix")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetBundle):
            return NotImplemented
        return (
            self.matrix == other.matrix
            and dict(self.features) == dict(other.features)
            and self.schema == other.schema
            and self.experiments == other.experiments
            and self.reference_item == other.reference_item
            and self.meta == other.meta
        )


# -- numbers -------------------------------------------------------------------


def fmt(v: Any) -> str:
    """Shortest round-trip text for floats, empty for None/NaN."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


# -- matrix CSV ------------------------------------------------------------------


def read_matrix_csv(path: str | os.PathLike) -> PerformanceMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        return parse_matrix_csv(fh.read(), str(path))


def parse_matrix_csv(text: str, source: str = "<string>") -> PerformanceMatrix:
    rows = list(csv.reader(_io.StringIO(text)))
    while rows and not any(cell.strip() for cell in rows[-1]):
        rows.pop()
    if not rows:
        raise DataError(f"{source}: empty matrix file")
    header = [c.strip() for c in rows[0]]
    case_ids = header[1:]
    if not case_ids:
        raise DataError(f"{source}: line 1: header has no case ids")
    item_ids, values = [], []
    for ln, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"{source}: line {ln}: expected {len(header)} cells, found {len(row)}")
        item_ids.append(row[0].strip())
        vals = []
        for col, cell in enumerate(row[1:], start=2):
            cell = cell.strip()
            if cell == "":
                vals.append(np.nan)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"{source}: line {ln}, column {col}: cannot parse {cell!r} as a number") from None
            if not math.isfinite(v):
                raise DataError(f"{source}: line {ln}, column {col}: non-finite value {cell!r}")
            vals.append(v)
        values.append(vals)
    arr = np.array(values, dtype=float).reshape(len(item_ids), len(case_ids))
    return PerformanceMatrix(arr, item_ids, case_ids)


def format_matrix_csv(m: PerformanceMatrix, corner: str = "item_id") -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([corner, *m.case_ids])
    vals, mask = m.values, m.observed
    for r, item in enumerate(m.item_ids):
        w.writerow([item, *(fmt(float(vals[r, c])) if mask[r, c] else "" for c in range(m.n_cases))])
    return buf.getvalue()


def write_matrix_csv(m: PerformanceMatrix, path: str | os.PathLike) -> None:
    Path(path).write_text(format_matrix_csv(m), encoding="utf-8")


# -- bundle JSON -----------------------------------------------------------------


def bundle_document(b: DatasetBundle) -> dict:
    return {
        "schema": b.schema.to_json(),
        "features": [
            {
                "case_id": f.case_id,
                "categorical": dict(f.categorical_values),
                "continuous": {k: float(v) for k, v in f.continuous_values.items()},
            }
            for f in (b.features[c] for c in b.matrix.case_ids if c in b.features)
        ],
        "experiments": {
            "ids": list(b.experiments.experiment_ids),
            "assignments": {c: b.experiments.assignments[c] for c in b.matrix.case_ids if c in b.experiments.assignments},
        },
        "reference_item": b.reference_item,
        "meta": b.meta,
    }


def features_from_document(doc: dict, source: str = "<bundle>") -> tuple[FeatureSchema, CaseFeatureTable]:
    if "schema" not in doc:
        raise DataError(f"{source}: missing 'schema'")
    schema = FeatureSchema.from_json(doc["schema"])
    try:
        cases = [
            CaseFeatures(str(d["case_id"]), dict(d.get("categorical", {})), dict(d.get("continuous", {})))
            for d in doc.get("features", [])
        ]
    except (KeyError, TypeError) as exc:
        raise DataError(f"{source}: malformed feature record: {exc}") from exc
    return schema, CaseFeatureTable.from_cases(cases)


def query_from_document(doc: dict, source: str = "<query>") -> CaseFeatures:
    try:
        return CaseFeatures(
            str(doc.get("case_id", "query")),
            dict(doc.get("categorical", {})),
            {k: float(v) for k, v in doc.get("continuous", {}).items()},
        )
    except (TypeError, ValueError, AttributeError) as exc:
        raise DataError(f"{source}: malformed query case: {exc}") from exc


def read_json(path: str | os.PathLike) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def load_bundle(matrix_path: str | os.PathLike, bundle_path: str | os.PathLike) -> DatasetBundle:
    """Read and cross-check a matrix CSV and its bundle JSON."""
    matrix = read_matrix_csv(matrix_path)
    doc = read_json(bundle_path)
    if not isinstance(doc, dict):
        raise DataError(f"{bundle_path}: top level must be an object")
    schema, features = features_from_document(doc, str(bundle_path))
    exp = doc.get("experiments")
    if not isinstance(exp, dict) or "assignments" not in exp:
        raise DataError(f"{bundle_path}: missing 'experiments.assignments'")
    em = ExperimentMap(exp["assignments"], tuple(exp.get("ids", ())))
    b = DatasetBundle(matrix, features, schema, em, doc.get("reference_item"), doc.get("meta", {}))
    b.check()
    return b


def save_bundle(b: DatasetBundle, matrix_path: str | os.PathLike, bundle_path: str | os.PathLike) -> None:
    write_matrix_csv(b.matrix, matrix_path)
    Path(bundle_path).write_text(json.dumps(bundle_document(b), indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- reports ---------------------------------------------------------------------


def _csv_text(columns: Sequence[str], rows: Iterable[dict]) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def report_tables(report: "CVReport") -> dict[str, str]:
    """File name -> CSV text for the per-cell, aggregate and per-experiment tables."""
    cells = []
    for c in report.cells:
        cells.append({
            "sparsity": c.sparsity, "realisation": c.realisation, "experiment": c.experiment,
            "method": c.method, "metric": c.metric, "k": c.k, "rr@1": c.rr1, "rr@3": c.rr3,
            "regret": c.regret, "val_mrr@3": c.val_mrr3, "val_mrr@1": c.val_mrr1,
            "n_cases": c.n_cases, "leakage_ok": report.audits.get((c.sparsity, c.realisation, c.experiment)),
        })
    return {
        "cells.csv": _csv_text(CELL_COLUMNS, cells),
        "aggregate.csv": _csv_text(AGGREGATE_COLUMNS, report.aggregate()),
        "experiments.csv": _csv_text(EXPERIMENT_COLUMNS, report.table4()),
    }


def run_manifest(report: "CVReport", inputs: dict | None = None) -> dict:
    import scipy

    from . import __version__, _kernels

    cfg = report.config
    return {
        "config": cfg.to_json(),
        "seeds": {"master": cfg.rng_seed, "derivation": "SeedSequence([master, sparsity_index, realisation])"},
        "grid_size": report.grid_size,
        "experiments": list(report.experiment_ids),
        "reference_item": report.reference_item,
        "ci_method": CI_METHOD,
        "leakage_audit": report.leakage_audit,
        "failures": [list(f) for f in report.failures],
        "analytic_random": report.analytic_random,
        "inputs": inputs or {},
        "versions": {
            "closurerec": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
            "kernel_backend": _kernels.BACKEND,
        },
    }


def save_report(report: "CVReport", out_dir: str | os.PathLike, inputs: dict | None = None) -> list[Path]:
    """Write cells.csv, aggregate.csv, experiments.csv and manifest.json; return their paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = dict(report_tables(report))
    files["manifest.json"] = json.dumps(run_manifest(report, inputs), indent=2, sort_keys=True) + "\n"
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths
