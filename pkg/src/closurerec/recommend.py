"""Hybrid neighbourhood recommender and the case-independent baselines."""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Mapping, Sequence

import numpy as np

from .domain import DataError, ExperimentMap, PerformanceMatrix
from .evaluation import experiment_balanced_mean
from .features import CaseFeatures, CaseFeatureTable, FeatureSchema, nearest_neighbors


@dataclass(frozen=True)
class RecommendationResult:
    query_case_id: str
    neighbor_ids: tuple[str, ...]
    neighbor_distances: tuple[float, ...]
    scores: Mapping[str, float]
    ranking: tuple[str, ...]

    def top(self, n: int = 1) -> tuple[str, ...]:
        return self.ranking[:n]


def item_tiebreak(item_ids: Sequence[str]) -> np.ndarray:
    """Lexical rank of each item id, used as the secondary sort key."""
    order = sorted(range(len(item_ids)), key=lambda i: item_ids[i])
    rank = np.empty(len(item_ids), dtype=np.int64)
    rank[order] = np.arange(len(item_ids))
    return rank


def rank_items(scores: np.ndarray, tiebreak: np.ndarray) -> np.ndarray:
    """Item positions sorted by score descending, ties by item id."""
    s = np.where(np.isnan(scores), -np.inf, scores)
    return np.lexsort((tiebreak, -s))


def overlay(sparse: PerformanceMatrix, completed: PerformanceMatrix) -> np.ndarray:
    """Observed entries where present, completed values elsewhere; columns in ``sparse`` order."""
    if sparse.item_ids != completed.item_ids:
        raise DataError("sparse and completed matrices have different items")
    cols = [completed.case_index(c) for c in sparse.case_ids]
    filled = completed.values[:, cols]
    return np.where(sparse.observed, sparse.values, filled)


def hybrid_recommend(
    q: CaseFeatures,
    history: tuple[PerformanceMatrix, CaseFeatureTable],
    completed: PerformanceMatrix,
    k: int,
    metric: str,
    schema: FeatureSchema,
) -> RecommendationResult:
    """Rank items for ``q`` by their mean over its ``k`` feature-space neighbours.

    Each neighbour contributes its observed score when the sparse history has
    one, else its completed (imputed) score.
    """
    sparse, table = history
    if sparse.n_cases == 0:
        raise DataError("history has no cases")
    if k < 1:
        raise ValueError("k must be >= 1")
    candidates = table.subset(sparse.case_ids)
    neigh = nearest_neighbors(q, candidates, k, metric, schema)
    ids = [c for c, _ in neigh]
    cols = [sparse.case_index(c) for c in ids]
    r_hat = overlay(sparse, completed)[:, cols]
    if np.isnan(r_hat).any():
        raise DataError("completed matrix has missing entries for neighbour cases")
    scores = r_hat.mean(axis=1)
    order = rank_items(scores, item_tiebreak(sparse.item_ids))
    return RecommendationResult(
        query_case_id=q.case_id,
        neighbor_ids=tuple(ids),
        neighbor_distances=tuple(d for _, d in neigh),
        scores={i: float(s) for i, s in zip(sparse.item_ids, scores)},
        ranking=tuple(sparse.item_ids[i] for i in order),
    )


def popularity_scores(m: PerformanceMatrix, em: ExperimentMap, flat: bool = False) -> np.ndarray:
    """Per-item mean of observed entries: two-level over experiments, or flat over entries.

    Items with no observation get NaN.
    """
    vals, mask = m.values, m.observed
    if flat:
        counts = mask.sum(axis=1)
        sums = np.where(mask, vals, 0.0).sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    exp_of = np.array([em.experiment_of(c) for c in m.case_ids], dtype=object)
    total = np.zeros(m.n_items)
    n_exp = np.zeros(m.n_items)
    for e in em.experiment_ids:
        cols = exp_of == e
        if not cols.any():
            continue
        cnt = mask[:, cols].sum(axis=1)
        s = np.where(mask[:, cols], vals[:, cols], 0.0).sum(axis=1)
        has = cnt > 0
        total[has] += s[has] / cnt[has]
        n_exp[has] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n_exp > 0, total / np.maximum(n_exp, 1), np.nan)


def popularity_ranking(m: PerformanceMatrix, em: ExperimentMap, flat: bool = False) -> tuple[str, ...]:
    scores = popularity_scores(m, em, flat)
    order = rank_items(scores, item_tiebreak(m.item_ids))
    return tuple(m.item_ids[i] for i in order)


def popularity_item(observed: PerformanceMatrix, em: ExperimentMap, flat: bool = False) -> str:
    """Item with the highest experiment-balanced mean observed score (ties by item id)."""
    if observed.n_observed == 0:
        raise DataError("popularity needs at least one observed entry")
    return popularity_ranking(observed, em, flat)[0]


def mc_popularity_item(completed: PerformanceMatrix, em: ExperimentMap, flat: bool = False) -> str:
    """Popularity computed on a completed matrix."""
    if not completed.is_complete:
        raise DataError("mc popularity needs a fully observed (completed) matrix")
    return popularity_ranking(completed, em, flat)[0]


def reference_item(item_id: str | None, item_ids: Sequence[str]) -> str:
    if item_id is None:
        raise DataError("no reference configured")
    if item_id not in item_ids:
        raise DataError(f"reference item {item_id!r} not in the matrix")
    return item_id


def random_recommendation(items: int | Sequence[str], list_length: int, rng_seed) -> list:
    """Uniform sample without replacement. ``items`` is a count (returns indices) or a list of ids."""
    pool = list(range(items)) if isinstance(items, int) else list(items)
    if not 1 <= list_length <= len(pool):
        raise ValueError(f"list_length must lie in [1, {len(pool)}]")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    picks = rng.choice(len(pool), size=list_length, replace=False)
    return [pool[i] for i in picks]


def _expected_rr(n_rel: int, n_items: int, k: int) -> float:
    if n_rel <= 0:
        return 0.0
    total = comb(n_items, n_rel)
    return sum(comb(n_items - i, n_rel - 1) / total / i for i in range(1, min(k, n_items) + 1))


def expected_random_rr(
    relevance_counts: Mapping[str, int] | Sequence[int],
    n_items: int,
    k: int,
    em: ExperimentMap | None = None,
) -> float:
    """Exact expected RR@k of a uniformly random ranking.

    The probability that the first relevant item sits at position ``i`` is
    ``C(n - i, r - 1) / C(n, r)``. Per-case expectations are averaged two-level
    when ``em`` is given (``relevance_counts`` keyed by case id), else flat.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    counts = dict(relevance_counts) if isinstance(relevance_counts, Mapping) else dict(enumerate(relevance_counts))
    if any(c > n_items for c in counts.values()):
        raise ValueError("relevance count exceeds n_items")
    per_case = {cid: _expected_rr(int(c), n_items, k) for cid, c in counts.items()}
    if em is not None:
        return experiment_balanced_mean(per_case, em)
    return float(np.mean(list(per_case.values())))
