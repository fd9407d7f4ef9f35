"""Sparsification and experiment-level nested cross-validation.

For every sparsity level and random realisation, each experiment is held
out in turn. The remaining experiments choose the kNN configuration by an
inner leave-one-experiment-out loop, the sparse remainder is completed, and
the held-out sub-cases are predicted and scored against ground truth next
to the popularity, completed-popularity, reference and random baselines.

Every read of performance values happens under an :class:`~closurerec.tracing.AccessLog`
so :func:`leakage_audit` can verify that a test experiment never reached
completion fitting or hyperparameter selection.
"""

from __future__ import annotations

import logging
import threading
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .completion import CompletionConfig, complete
from .domain import DataError, ExperimentMap, PerformanceMatrix, drop_experiment
from .evaluation import DEFAULT_THRESHOLD, confidence_interval, relevance_mask, rr_from_order
from .features import METRICS, CaseFeatureTable, FeatureIndex, FeatureSchema
from .recommend import (
    expected_random_rr,
    item_tiebreak,
    overlay,
    popularity_scores,
    rank_items,
)
from .tracing import AccessLog, record_read, stage, tracing

log = logging.getLogger(__name__)

DEFAULT_K_VALUES = (1, 2, 3, 5, 10, 15, 20, 30, 50)
METHODS = ("RS", "Pop", "MC", "Reference", "Random", "Oracle")
_METRIC_ORDER = {m: i for i, m in enumerate(METRICS)}


@dataclass(frozen=True)
class HyperGrid:
    metrics: tuple[str, ...] = METRICS
    k_values: tuple[int, ...] = DEFAULT_K_VALUES

    def __post_init__(self) -> None:
        object.__setattr__(self, "metrics", tuple(self.metrics))
        object.__setattr__(self, "k_values", tuple(int(k) for k in self.k_values))
        if not self.metrics or not self.k_values:
            raise ValueError("grid needs at least one metric and one k")
        bad = [m for m in self.metrics if m not in METRICS]
        if bad:
            raise ValueError(f"unknown metrics {bad}")
        if min(self.k_values) < 1:
            raise ValueError("k values must be >= 1")

    def configs(self) -> list[tuple[str, int]]:
        """All (metric, k) pairs in selection tie-break order: smaller k first, then metric order."""
        return sorted(
            {(m, k) for m in self.metrics for k in self.k_values},
            key=lambda c: (c[1], _METRIC_ORDER[c[0]]),
        )

    def __len__(self) -> int:
        return len(self.configs())


@dataclass(frozen=True)
class CVConfig:
    sparsity_levels: tuple[float, ...] = (0.25, 0.50, 0.75, 0.90)
    n_realisations: int = 100
    rng_seed: int = 0
    completion: CompletionConfig = field(default_factory=CompletionConfig)
    grid: HyperGrid = field(default_factory=HyperGrid)
    relevance_threshold: float = DEFAULT_THRESHOLD
    selection_metric: str = "mrr@3"
    random_list_length: int = 3
    popularity_flat: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "sparsity_levels", tuple(float(s) for s in self.sparsity_levels))
        if any(not 0.0 <= s < 1.0 for s in self.sparsity_levels):
            raise ValueError("sparsity levels must lie in [0, 1)")
        if self.n_realisations < 1:
            raise ValueError("n_realisations must be >= 1")
        if self.selection_metric not in ("mrr@3", "mrr@1"):
            raise ValueError("selection_metric must be 'mrr@3' or 'mrr@1'")

    def to_json(self) -> dict:
        d = asdict(self)
        d["grid"] = {"metrics": list(self.grid.metrics), "k_values": list(self.grid.k_values)}
        d["sparsity_levels"] = list(self.sparsity_levels)
        return d

    @classmethod
    def from_json(cls, doc: dict) -> "CVConfig":
        doc = dict(doc)
        if "completion" in doc:
            doc["completion"] = CompletionConfig.from_json(doc["completion"])
        if "grid" in doc:
            doc["grid"] = HyperGrid(**doc["grid"])
        if "sparsity_levels" in doc:
            doc["sparsity_levels"] = tuple(doc["sparsity_levels"])
        return cls(**doc)


# -- sparsification ----------------------------------------------------------


def sparsify(m: PerformanceMatrix, s: float, seed) -> PerformanceMatrix:
    """Hide exactly ``round(s * N)`` entries, chosen uniformly without replacement."""
    if not 0.0 <= s < 1.0:
        raise ValueError(f"sparsity must lie in [0, 1), got {s}")
    if not m.is_complete:
        raise DataError("sparsify expects a fully observed matrix")
    n = m.n_items * m.n_cases
    n_remove = int(round(s * n))
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mask = np.ones(n, dtype=bool)
    mask[rng.choice(n, size=n_remove, replace=False)] = False
    return m.with_mask(mask.reshape(m.shape))


# -- completion cache ----------------------------------------------------------


class FitCache:
    """Completed matrices keyed by input content and completion config."""

    def __init__(self) -> None:
        self._store: dict[tuple, PerformanceMatrix] = {}
        self._lock = threading.Lock()
        self.hits = 0

    def complete(self, m: PerformanceMatrix, cfg: CompletionConfig) -> PerformanceMatrix:
        key = (m.content_key(), cfg)
        with self._lock:
            hit = self._store.get(key)
        if hit is not None:
            record_read(m.case_ids)
            self.hits += 1
            return hit
        out = complete(m, cfg)
        with self._lock:
            self._store[key] = out
        return out


# -- inner loop ----------------------------------------------------------------


@dataclass(frozen=True)
class InnerResult:
    best_metric: str
    best_k: int
    val_mrr3: dict[tuple[str, int], float]
    val_mrr1: dict[tuple[str, int], float]


def _neighbour_scores(r_hat: np.ndarray, order: np.ndarray, k_values: Sequence[int]) -> dict[int, np.ndarray]:
    """Item scores (n_items, n_queries) for each k from per-query neighbour orders."""
    stacked = r_hat[:, order]  # (items, queries, candidates)
    cum = np.cumsum(stacked, axis=2)
    n_cand = order.shape[1]
    out = {}
    for k in k_values:
        kk = min(k, n_cand)
        out[k] = cum[:, :, kk - 1] / kk
    return out


def _case_rrs(scores: np.ndarray, rel: np.ndarray, tiebreak: np.ndarray, ks=(1, 3)) -> tuple[np.ndarray, np.ndarray]:
    """Per-query rankings, and RR@k for each k in ``ks`` (rows follow ``ks``)."""
    n_q = scores.shape[1]
    orders = np.empty((n_q, scores.shape[0]), dtype=np.int64)
    rr = np.empty((len(ks), n_q))
    for c in range(n_q):
        orders[c] = rank_items(scores[:, c], tiebreak)
        for a, k in enumerate(ks):
            rr[a, c] = rr_from_order(orders[c], rel[:, c], k)
    return orders, rr


def inner_cv(
    sparse: PerformanceMatrix,
    truth: PerformanceMatrix,
    features: FeatureIndex,
    em: ExperimentMap,
    grid: HyperGrid,
    completion_cfg: CompletionConfig,
    threshold: float = DEFAULT_THRESHOLD,
    cache: FitCache | None = None,
    selection_metric: str = "mrr@3",
) -> InnerResult:
    """Leave-one-experiment-out selection of the kNN (metric, k) on a sparse matrix.

    ``sparse`` must already exclude the test experiment; ``truth`` holds ground
    truth for (at least) its cases and is read only for the validation cases.
    Ties go to the smaller k, then euclidean < cosine < gower.
    """
    cache = cache or FitCache()
    em_s = em.restrict(sparse.case_ids)
    exps = list(em_s.experiment_ids)
    if len(exps) < 2:
        raise DataError("inner cross-validation needs at least 2 experiments")
    configs = grid.configs()
    tiebreak = item_tiebreak(sparse.item_ids)
    per_exp3: dict[tuple[str, int], list[float]] = {c: [] for c in configs}
    per_exp1: dict[tuple[str, int], list[float]] = {c: [] for c in configs}

    for v in exps:
        train, _ = drop_experiment(sparse, em_s, v)
        filled = cache.complete(train, completion_cfg)
        r_hat = overlay(train, filled)
        v_cases = em_s.cases_of(v, order=sparse.case_ids)
        rel = relevance_mask(truth.select_cases(v_cases).values, threshold)
        for metric in grid.metrics:
            order, _ = features.neighbour_order(v_cases, train.case_ids, metric)
            by_k = _neighbour_scores(r_hat, order, grid.k_values)
            for k in grid.k_values:
                _, rr = _case_rrs(by_k[k], rel, tiebreak)
                per_exp1[(metric, k)].append(float(rr[0].mean()))
                per_exp3[(metric, k)].append(float(rr[1].mean()))

    val3 = {c: float(np.mean(per_exp3[c])) for c in configs}
    val1 = {c: float(np.mean(per_exp1[c])) for c in configs}
    target = val3 if selection_metric == "mrr@3" else val1
    best = configs[0]
    for c in configs[1:]:
        if target[c] > target[best]:
            best = c
    return InnerResult(best[0], best[1], val3, val1)


# -- outer loop ----------------------------------------------------------------


@dataclass(frozen=True)
class CellRecord:
    sparsity: float
    realisation: int
    experiment: str
    method: str
    metric: str | None
    k: int | None
    rr1: float
    rr3: float | None
    regret: float
    val_mrr3: float | None
    val_mrr1: float | None
    n_cases: int


@dataclass
class CVReport:
    config: CVConfig
    experiment_ids: tuple[str, ...]
    cells: list[CellRecord] = field(default_factory=list)
    failures: list[tuple[float, int, str, str]] = field(default_factory=list)
    audits: dict[tuple[float, int, str], bool] = field(default_factory=dict)
    analytic_random: dict[str, float] = field(default_factory=dict)
    reference_item: str | None = None

    @property
    def leakage_audit(self) -> bool:
        return bool(self.audits) and all(self.audits.values())

    @property
    def grid_size(self) -> int:
        return len(self.config.grid)

    # ---- aggregation ----
    def _per_realisation(self, method: str, sparsity: float | None = None):
        """{(sparsity, realisation): (mrr1, mrr3, regret)} averaged over test experiments."""
        groups: dict[tuple[float, int], list[CellRecord]] = {}
        for c in self.cells:
            if c.method == method and (sparsity is None or c.sparsity == sparsity):
                groups.setdefault((c.sparsity, c.realisation), []).append(c)
        out = {}
        for key, rows in sorted(groups.items()):
            rr3 = [r.rr3 for r in rows if r.rr3 is not None]
            out[key] = (
                float(np.mean([r.rr1 for r in rows])),
                float(np.mean(rr3)) if rr3 else None,
                float(np.mean([r.regret for r in rows])),
            )
        return out

    @staticmethod
    def _summ(samples: list[float | None]) -> tuple[float | None, float | None, float | None]:
        xs = [x for x in samples if x is not None]
        if not xs:
            return None, None, None
        if len(xs) < 2:
            return float(xs[0]), None, None
        return confidence_interval(xs)

    def aggregate(self) -> list[dict]:
        """Rows of (sparsity, method) with means and 95% CIs over realisations.

        Pop, MC and RS get one row per sparsity level; Reference and Random
        do not depend on sparsity and are pooled into one row each.
        """
        rows = []

        def row(label, method, per):
            vals = list(per.values())
            if not vals:
                return None
            out = {"sparsity": label, "method": method, "n_samples": len(vals)}
            for a, name in enumerate(("mrr@1", "mrr@3", "regret")):
                mean, lo, hi = self._summ([v[a] for v in vals])
                out[name], out[f"{name}_lo"], out[f"{name}_hi"] = mean, lo, hi
            return out

        for s in self.config.sparsity_levels:
            for method in ("Pop", "MC", "RS"):
                rows.append(row(s, method, self._per_realisation(method, s)))
        for method in ("Reference", "Random"):
            rows.append(row("all", method, self._per_realisation(method)))
        return [r for r in rows if r is not None]

    def table5(self) -> list[dict]:
        """Wide MRR layout: per sparsity Pop/MC/RS for @1 and @3, then Reference and Random."""
        agg = {(r["sparsity"], r["method"]): r for r in self.aggregate()}
        get = lambda key, col: agg.get(key, {}).get(col)  # noqa: E731
        out = []
        for s in self.config.sparsity_levels:
            row = {"sparsity": s}
            for k in ("mrr@1", "mrr@3"):
                for m in ("Pop", "MC", "RS"):
                    row[f"{k}_{m}"] = get((s, m), k)
            out.append(row)
        for m in ("Reference", "Random"):
            out.append({"sparsity": m, "mrr@1_RS": get(("all", m), "mrr@1"), "mrr@3_RS": get(("all", m), "mrr@3")})
        return out

    def table7(self) -> list[dict]:
        """Wide regret layout: per sparsity Pop/MC/RS, then Reference and Random."""
        agg = {(r["sparsity"], r["method"]): r for r in self.aggregate()}
        get = lambda key: agg.get(key, {}).get("regret")  # noqa: E731
        out = []
        for s in self.config.sparsity_levels:
            out.append({"sparsity": s, **{f"regret_{m}": get((s, m)) for m in ("Pop", "MC", "RS")}})
        for m in ("Reference", "Random"):
            out.append({"sparsity": m, "regret_RS": get(("all", m))})
        return out

    def table4(self, sparsity: float | None = None) -> list[dict]:
        """Per test experiment: modal chosen (metric, k), RR@1/RR@3 test means with CIs, validation MRRs."""
        levels = self.config.sparsity_levels if sparsity is None else (sparsity,)
        out = []
        for s in levels:
            for e in self.experiment_ids:
                rows = [c for c in self.cells if c.method == "RS" and c.sparsity == s and c.experiment == e]
                if not rows:
                    continue
                counts = Counter((r.metric, r.k) for r in rows)
                metric, k = min(counts, key=lambda c: (-counts[c], c[1], _METRIC_ORDER[c[0]]))
                rec = {"sparsity": s, "experiment": e, "metric": metric, "k": k}
                for name, vals in (("rr@1", [r.rr1 for r in rows]), ("rr@3", [r.rr3 for r in rows])):
                    mean, lo, hi = self._summ(vals)
                    rec[name], rec[f"{name}_lo"], rec[f"{name}_hi"] = mean, lo, hi
                for name, attr in (("val_mrr@3", "val_mrr3"), ("val_mrr@1", "val_mrr1")):
                    vals = [getattr(r, attr) for r in rows if getattr(r, attr) is not None]
                    rec[name] = float(np.mean(vals)) if vals else None
                out.append(rec)
        return out


def leakage_audit(trace: AccessLog, em: ExperimentMap, experiment_id: str) -> bool:
    """True iff no performance value of the experiment's cases was read while
    fitting completions or selecting hyperparameters."""
    held_out = set(em.cases_of(experiment_id))
    touched = trace.cases_read("inner_cv") | trace.cases_read("completion")
    return not (held_out & touched)


def _fallback_inner(grid: HyperGrid, e: str) -> InnerResult:
    """First grid config in tie-break order, used when no validation experiment is left."""
    metric, k = grid.configs()[0]
    log.warning("experiment %s: fewer than 2 training experiments, using %s k=%d unvalidated", e, metric, k)
    return InnerResult(metric, k, {}, {})


@dataclass(frozen=True)
class _Task:
    s_index: int
    sparsity: float
    realisation: int


@dataclass(frozen=True)
class _Shared:
    truth: PerformanceMatrix
    index: FeatureIndex
    em: ExperimentMap
    cfg: CVConfig
    reference_item: str | None
    keep_test_columns: bool = False


def _seeds(cfg: CVConfig, task: _Task) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.rng_seed, task.s_index, task.realisation])


def _run_task(shared: _Shared, task: _Task):
    cfg, em, truth = shared.cfg, shared.em, shared.truth
    root = _seeds(cfg, task)
    mask_seed, comp_seed, rand_seed = root.spawn(3)
    comp_cfg = CompletionConfig(**{**asdict(cfg.completion), "rng_seed": int(comp_seed.generate_state(1)[0])})
    rand_rng = np.random.default_rng(rand_seed)
    sparse = sparsify(truth, task.sparsity, np.random.default_rng(mask_seed))
    cache = FitCache()
    tiebreak = item_tiebreak(truth.item_ids)
    ref_pos = truth.item_index(shared.reference_item) if shared.reference_item else None
    cells: list[CellRecord] = []
    failures = []
    audits = {}

    for e in em.experiment_ids:
        trace = AccessLog()
        e_cases = em.cases_of(e, order=truth.case_ids)
        try:
            with tracing(trace):
                if shared.keep_test_columns:
                    s_mat, em_s = sparse, em
                else:
                    s_mat, em_s = drop_experiment(sparse, em, e)
                truth_s = truth.select_cases(s_mat.case_ids)
                with stage("inner_cv"):
                    if len(em_s.restrict(s_mat.case_ids)) >= 2:
                        inner = inner_cv(
                            s_mat, truth_s, shared.index, em_s, cfg.grid, comp_cfg,
                            cfg.relevance_threshold, cache, cfg.selection_metric,
                        )
                    else:
                        inner = _fallback_inner(cfg.grid, e)
                with stage("completion"):
                    filled = cache.complete(s_mat, comp_cfg)
                with stage("predict"):
                    r_hat = overlay(s_mat, filled)
                    order, _ = shared.index.neighbour_order(e_cases, s_mat.case_ids, inner.best_metric)
                    rs_scores = _neighbour_scores(r_hat, order, [inner.best_k])[inner.best_k]
                    pop = popularity_scores(s_mat, em_s, cfg.popularity_flat)
                    mc = popularity_scores(filled, em_s, cfg.popularity_flat)
                with stage("score"):
                    gt = truth.select_cases(e_cases).values
        except (DataError, np.linalg.LinAlgError, ValueError) as exc:
            log.warning("sparsity %s realisation %d experiment %s failed: %s", task.sparsity, task.realisation, e, exc)
            failures.append((task.sparsity, task.realisation, e, str(exc)))
            continue
        audits[(task.sparsity, task.realisation, e)] = leakage_audit(trace, em, e)

        rel = relevance_mask(gt, cfg.relevance_threshold)
        best = gt.max(axis=0)
        n_c = len(e_cases)

        def emit(method, rr1, rr3, reg, metric=None, k=None, v3=None, v1=None):
            cells.append(CellRecord(
                task.sparsity, task.realisation, e, method, metric, k,
                float(np.mean(rr1)), None if rr3 is None else float(np.mean(rr3)),
                float(np.mean(reg)), v3, v1, n_c,
            ))

        orders, rr = _case_rrs(rs_scores, rel, tiebreak)
        top = orders[:, 0]
        emit("RS", rr[0], rr[1], best - gt[top, np.arange(n_c)], inner.best_metric, inner.best_k,
             inner.val_mrr3.get((inner.best_metric, inner.best_k)), inner.val_mrr1.get((inner.best_metric, inner.best_k)))

        for name, sc in (("Pop", pop), ("MC", mc)):
            o = rank_items(sc, tiebreak)
            rr1 = [rr_from_order(o, rel[:, c], 1) for c in range(n_c)]
            rr3 = [rr_from_order(o, rel[:, c], 3) for c in range(n_c)]
            emit(name, rr1, rr3, best - gt[o[0]])

        if ref_pos is not None:
            emit("Reference", rel[ref_pos].astype(float), None, best - gt[ref_pos])

        n_items = truth.n_items
        L = min(cfg.random_list_length, n_items)
        r1, r3, rg = [], [], []
        for c in range(n_c):
            picks = rand_rng.choice(n_items, size=L, replace=False)
            r1.append(rr_from_order(picks, rel[:, c], 1))
            r3.append(rr_from_order(picks, rel[:, c], 3))
            rg.append(best[c] - gt[picks[0], c])
        emit("Random", r1, r3, rg)

        oracle = np.argmax(gt, axis=0)
        emit("Oracle", rel[oracle, np.arange(n_c)].astype(float),
             rel[oracle, np.arange(n_c)].astype(float), best - gt[oracle, np.arange(n_c)])

    return task, cells, failures, audits


def _run_task_star(args):
    return _run_task(*args)


def run_nested_cv(
    R: PerformanceMatrix,
    features: CaseFeatureTable,
    em: ExperimentMap,
    cfg: CVConfig,
    *,
    schema: FeatureSchema,
    reference_item: str | None = None,
    threads: int = 1,
    _keep_test_columns: bool = False,
) -> CVReport:
    """Run the full sparsity x realisation x test-experiment loop.

    ``threads`` > 1 distributes (sparsity, realisation) cells over worker
    processes; results are merged in a fixed order, so the report does not
    depend on it. ``_keep_test_columns`` is a fault-injection hook for the
    leakage audit tests and must stay False in real runs.
    """
    if not R.is_complete:
        raise DataError("ground-truth matrix must be fully observed")
    missing = [c for c in R.case_ids if c not in em.assignments]
    if missing:
        raise DataError(f"cases without an experiment: {missing}")
    if reference_item is not None and reference_item not in R.item_ids:
        raise DataError(f"reference item {reference_item!r} not in the matrix")
    index = FeatureIndex(features.subset(R.case_ids), schema)
    em = em.restrict(R.case_ids)
    shared = _Shared(R, index, em, cfg, reference_item, _keep_test_columns)
    tasks = [
        _Task(i, s, r)
        for i, s in enumerate(cfg.sparsity_levels)
        for r in range(cfg.n_realisations)
    ]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_task_star, [(shared, t) for t in tasks]))
    else:
        results = [_run_task(shared, t) for t in tasks]

    report = CVReport(cfg, em.experiment_ids, reference_item=reference_item)
    for _, cells, failures, audits in results:
        report.cells.extend(cells)
        report.failures.extend(failures)
        report.audits.update(audits)

    gt = R.values
    counts = dict(zip(R.case_ids, relevance_mask(gt, cfg.relevance_threshold).sum(axis=0).tolist()))
    L = min(cfg.random_list_length, R.n_items)
    report.analytic_random = {
        "mrr@1": expected_random_rr(counts, R.n_items, 1, em),
        "mrr@3": expected_random_rr(counts, R.n_items, min(3, L), em),
    }
    return report
