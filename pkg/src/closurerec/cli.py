"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .completion import CompletionConfig, complete
from .domain import DataError, ExperimentMap, validate_matrix
from .evaluation import DEFAULT_THRESHOLD, experiment_balanced_mean, relevance_mask
from .features import METRICS
from .io import (
    fmt,
    format_matrix_csv,
    load_bundle,
    query_from_document,
    read_json,
    read_matrix_csv,
    save_bundle,
    save_report,
    write_matrix_csv,
)
from .protocol import CVConfig, HyperGrid, run_nested_cv
from .recommend import hybrid_recommend
from .stability import AMPLITUDE_FRACTION, MIN_CHANGES, longest_change_run
from .synth import SynthConfig, generate_synthetic, preview_matrix

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("closurerec")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_sections(path: str | None) -> dict:
    """Config file: either a run manifest (``config`` key) or ``{cv, completion, synth}`` sections."""
    if path is None:
        return {}
    doc = read_json(path)
    if not isinstance(doc, dict):
        raise DataError(f"{path}: config must be a JSON object")
    if "config" in doc:
        return {"cv": doc["config"]}
    unknown = set(doc) - {"cv", "completion", "synth"}
    if unknown:
        raise DataError(f"{path}: unknown config sections {sorted(unknown)}")
    return doc


def _completion_overrides(args) -> dict:
    out = {}
    if getattr(args, "method", None):
        out["method"] = args.method
    if getattr(args, "rank", None):
        out["rank"] = args.rank
    if getattr(args, "regularisation", None) is not None:
        out["regularisation"] = args.regularisation
    return out


def _completion_cfg(args, sections: dict) -> CompletionConfig:
    cfg = CompletionConfig.from_json(sections.get("completion", {}))
    changes = _completion_overrides(args)
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    return replace(cfg, **changes)


def _out_text(path: str | None, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _csv_lines(rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


# -- subcommands ------------------------------------------------------------------


def cmd_evaluate(args, sections) -> int:
    bundle = load_bundle(args.matrix, args.bundle)
    cfg = CVConfig.from_json(sections["cv"]) if "cv" in sections else CVConfig()
    if "completion" in sections and "cv" not in sections:
        cfg = replace(cfg, completion=CompletionConfig.from_json(sections["completion"]))
    changes = {}
    if args.sparsity:
        changes["sparsity_levels"] = tuple(args.sparsity)
    if args.realisations:
        changes["n_realisations"] = args.realisations
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    if args.k_values or args.metrics:
        changes["grid"] = HyperGrid(
            tuple(args.metrics) if args.metrics else cfg.grid.metrics,
            tuple(args.k_values) if args.k_values else cfg.grid.k_values,
        )
    if args.threshold is not None:
        changes["relevance_threshold"] = args.threshold
    if args.flat_popularity:
        changes["popularity_flat"] = True
    cfg = replace(cfg, **changes)
    cfg = replace(cfg, completion=replace(cfg.completion, **_completion_overrides(args)))
    ref = args.reference if args.reference is not None else bundle.reference_item
    report = run_nested_cv(
        bundle.matrix, bundle.features, bundle.experiments, cfg,
        schema=bundle.schema, reference_item=ref, threads=args.threads,
    )
    inputs = {
        "matrix_sha1": bundle.matrix.content_key().hex(),
        "n_items": bundle.matrix.n_items,
        "n_cases": bundle.matrix.n_cases,
    }
    save_report(report, args.out, inputs)
    if report.failures:
        log.warning("%d fits failed and were excluded; see manifest.json", len(report.failures))
    print(f"report written to {args.out} (leakage audit {'passed' if report.leakage_audit else 'FAILED'})")
    return EXIT_OK


def cmd_recommend(args, sections) -> int:
    bundle = load_bundle(args.matrix, args.bundle)
    q = query_from_document(read_json(args.query), args.query)
    q.check(bundle.schema)
    cfg = _completion_cfg(args, sections)
    filled = complete(bundle.matrix, cfg)
    res = hybrid_recommend(q, (bundle.matrix, bundle.features), filled, args.k, args.metric, bundle.schema)
    n = len(res.ranking) if args.top is None else args.top
    rows = [("rank", "item_id", "score")]
    rows += [(i + 1, item, res.scores[item]) for i, item in enumerate(res.ranking[:n])]
    _out_text(args.out, _csv_lines(rows))
    log.info("neighbours of %s: %s", res.query_case_id, ", ".join(res.neighbor_ids))
    return EXIT_OK


def cmd_complete(args, sections) -> int:
    m = read_matrix_csv(args.matrix)
    report = validate_matrix(m)
    if not report.ok:
        raise DataError("; ".join(f"{loc}: {msg}" for loc, msg in report.issues[:10]))
    out = complete(m, _completion_cfg(args, sections))
    _out_text(args.out, format_matrix_csv(out))
    return EXIT_OK


def _read_profiles(path: str) -> list[tuple[str, list[float]]]:
    """One profile per row; a non-numeric first cell is a label shared by profiles of one simulation."""
    profiles = []
    with open(path, newline="", encoding="utf-8") as fh:
        for ln, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row if c.strip() != ""]
            if not cells:
                continue
            label = str(ln)
            try:
                float(cells[0])
            except ValueError:
                label, cells = cells[0], cells[1:]
            try:
                vals = [float(c) for c in cells]
            except ValueError as exc:
                raise DataError(f"{path}: line {ln}: {exc}") from None
            if len(vals) < 2:
                raise DataError(f"{path}: line {ln}: profile needs at least 2 values")
            profiles.append((label, vals))
    return profiles


def cmd_detect_stagger(args, sections) -> int:
    profiles = _read_profiles(args.profiles)
    rows = []
    for label, vals in profiles:
        run = longest_change_run(vals, args.amplitude)
        rows.append((label, run, run >= args.min_changes))
    if args.per_profile:
        out = [("profile", "longest_run", "staggering")] + rows
    else:
        merged: dict[str, list] = {}
        for label, run, flag in rows:
            cur = merged.setdefault(label, [0, False])
            cur[0] = max(cur[0], run)
            cur[1] = cur[1] or flag
        out = [("profile", "longest_run", "staggering")] + [(k, v[0], v[1]) for k, v in merged.items()]
    _out_text(args.out, _csv_lines(out))
    return EXIT_OK


def cmd_synth(args, sections) -> int:
    base = SynthConfig.from_json(sections.get("synth", {})) if "synth" in sections else SynthConfig()
    changes = {
        name: getattr(args, name)
        for name in (
            "n_items", "n_cases", "n_experiments", "latent_rank", "noise_sd", "cluster_separation",
            "n_categorical", "n_continuous", "sparsity_preview", "n_clusters",
        )
        if getattr(args, name) is not None
    }
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    cfg = replace(base, **changes)
    bundle = generate_synthetic(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_bundle(bundle, out / "matrix.csv", out / "bundle.json")
    preview = preview_matrix(bundle, cfg)
    if preview is not None:
        write_matrix_csv(preview, out / "preview.csv")
    print(f"synthetic bundle written to {out}")
    return EXIT_OK


def cmd_metrics(args, sections) -> int:
    truth = read_matrix_csv(args.truth)
    if not truth.is_complete:
        raise DataError(f"{args.truth}: ground truth must be fully observed")
    if args.bundle:
        doc = read_json(args.bundle)
        exp = doc.get("experiments", {}) if isinstance(doc, dict) else {}
        em = ExperimentMap(exp.get("assignments", {}), tuple(exp.get("ids", ())))
    else:
        em = ExperimentMap({c: c for c in truth.case_ids})
    rel = relevance_mask(truth.values, args.threshold)
    gt = truth.values
    rankings: dict[str, list[str]] = {}
    with open(args.rankings, newline="", encoding="utf-8") as fh:
        for ln, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row if c.strip() != ""]
            if not cells or (ln == 1 and cells[0] == "case_id"):
                continue
            case, items = cells[0], cells[1:]
            if case not in truth.case_ids:
                raise DataError(f"{args.rankings}: line {ln}: unknown case {case!r}")
            unknown = [i for i in items if i not in truth.item_ids]
            if unknown:
                raise DataError(f"{args.rankings}: line {ln}: unknown items {unknown}")
            if not items or len(set(items)) != len(items):
                raise DataError(f"{args.rankings}: line {ln}: ranking must be nonempty without duplicates")
            rankings[case] = items
    if not rankings:
        raise DataError(f"{args.rankings}: no rankings")
    per_case = {}
    for case, items in rankings.items():
        j = truth.case_index(case)
        pos = [truth.item_index(i) for i in items]
        hits = np.flatnonzero(rel[pos, j])
        first = hits[0] + 1 if hits.size else None
        per_case[case] = (
            1.0 if first == 1 else 0.0,
            1.0 / first if first is not None and first <= 3 else 0.0,
            float(gt[:, j].max() - gt[pos[0], j]),
        )
    em = em.restrict(rankings)
    rows = [("metric", "value")]
    for a, name in enumerate(("mrr@1", "mrr@3", "regret")):
        rows.append((name, experiment_balanced_mean({c: v[a] for c, v in per_case.items()}, em)))
    rows.append(("n_cases", len(per_case)))
    rows.append(("n_experiments", len(em)))
    _out_text(args.out, _csv_lines(rows))
    return EXIT_OK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="closurerec", description="Cold-start closure-model recommender and its evaluation protocol.")
    p.add_argument("--version", action="version", version=f"closurerec {__version__}")
    p.add_argument("--seed", type=int, default=None, help="master RNG seed (overrides config)")
    p.add_argument("--config", default=None, help="JSON config or run manifest")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker processes for evaluate")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def completion_flags(sp):
        sp.add_argument("--method", choices=("copula", "soft_impute"))
        sp.add_argument("--rank", type=int)
        sp.add_argument("--regularisation", type=float)

    ev = sub.add_parser("evaluate", help="nested cross-validation on a bundle")
    ev.add_argument("--matrix", required=True)
    ev.add_argument("--bundle", required=True)
    ev.add_argument("--out", required=True, help="report directory")
    ev.add_argument("--sparsity", type=float, nargs="+")
    ev.add_argument("--realisations", type=int)
    ev.add_argument("--k-values", type=int, nargs="+")
    ev.add_argument("--metrics", nargs="+", choices=METRICS)
    ev.add_argument("--threshold", type=float)
    ev.add_argument("--reference")
    ev.add_argument("--flat-popularity", action="store_true")
    completion_flags(ev)
    ev.set_defaults(func=cmd_evaluate)

    rc = sub.add_parser("recommend", help="rank items for a query case")
    rc.add_argument("--matrix", required=True)
    rc.add_argument("--bundle", required=True)
    rc.add_argument("--query", required=True, help="query-case JSON")
    rc.add_argument("--k", type=int, default=5)
    rc.add_argument("--metric", choices=METRICS, default="euclidean")
    rc.add_argument("--top", type=int)
    rc.add_argument("--out")
    completion_flags(rc)
    rc.set_defaults(func=cmd_recommend)

    cp = sub.add_parser("complete", help="impute a sparse matrix CSV")
    cp.add_argument("--matrix", required=True)
    cp.add_argument("--out")
    completion_flags(cp)
    cp.set_defaults(func=cmd_complete)

    ds = sub.add_parser("detect-stagger", help="flag oscillatory profiles")
    ds.add_argument("--profiles", required=True, help="CSV, one profile per row, optional label first")
    ds.add_argument("--min-changes", type=int, default=MIN_CHANGES)
    ds.add_argument("--amplitude", type=float, default=AMPLITUDE_FRACTION)
    ds.add_argument("--per-profile", action="store_true", help="one row per profile instead of OR per label")
    ds.add_argument("--out")
    ds.set_defaults(func=cmd_detect_stagger)

    sy = sub.add_parser("synth", help="generate a synthetic bundle")
    sy.add_argument("--out", required=True)
    for name, typ in (
        ("n_items", int), ("n_cases", int), ("n_experiments", int), ("latent_rank", int),
        ("noise_sd", float), ("cluster_separation", float), ("n_categorical", int),
        ("n_continuous", int), ("sparsity_preview", float), ("n_clusters", int),
    ):
        sy.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    sy.set_defaults(func=cmd_synth)

    mt = sub.add_parser("metrics", help="score rankings against ground truth")
    mt.add_argument("--truth", required=True, help="fully observed matrix CSV")
    mt.add_argument("--rankings", required=True, help="CSV rows: case_id, item ids best first")
    mt.add_argument("--bundle", help="bundle JSON for experiment grouping (default: one per case)")
    mt.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    mt.add_argument("--out")
    mt.set_defaults(func=cmd_metrics)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.threads < 1:
        print("closurerec: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        sections = _config_sections(args.config)
        return args.func(args, sections)
    except (DataError, FileNotFoundError, IsADirectoryError, KeyError, TypeError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"closurerec: data error: {msg}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"closurerec: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
