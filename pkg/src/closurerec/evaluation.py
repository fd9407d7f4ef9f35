"""Relevance sets, reciprocal-rank metrics, regret and confidence intervals.

Averages are two-level throughout: case values are averaged within an
experiment first, and experiments then weigh equally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import norm

from .domain import ExperimentMap

DEFAULT_THRESHOLD = 0.05
# absorbs float error in ``best - threshold`` (0.90 - 0.05 != 0.85 exactly)
_REL_EPS = 1e-12


@dataclass(frozen=True)
class RelevanceSet:
    case_id: str
    best_performance: float
    relevant: tuple[str, ...]
    threshold: float = DEFAULT_THRESHOLD

    def __contains__(self, item_id: object) -> bool:
        return item_id in self.relevant


@dataclass(frozen=True)
class MetricRecord:
    level: str
    metric: str
    value: float
    ci_low: float | None = None
    ci_high: float | None = None


def relevant_items(
    ground_truth_column: Mapping[str, float],
    threshold: float = DEFAULT_THRESHOLD,
    case_id: str = "",
) -> RelevanceSet:
    """Items within ``threshold`` of the best ground-truth score, best first."""
    if not ground_truth_column:
        raise ValueError("ground-truth column is empty")
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    best = max(ground_truth_column.values())
    cut = best - threshold - (_REL_EPS if threshold > 0 else 0.0)
    rel = [i for i, p in ground_truth_column.items() if p >= cut]
    rel.sort(key=lambda i: (-ground_truth_column[i], i))
    return RelevanceSet(case_id, float(best), tuple(rel), threshold)


def relevance_mask(truth: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Array form of :func:`relevant_items` over the first axis (items)."""
    best = truth.max(axis=0, keepdims=True)
    cut = best - threshold - (_REL_EPS if threshold > 0 else 0.0)
    return truth >= cut


def rr_at_k(ranking: Sequence[str], rel: RelevanceSet | Iterable[str], k: int) -> float:
    """Reciprocal rank of the first relevant item within the top ``k`` (0 if none)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(set(ranking)) != len(ranking):
        raise ValueError("ranking contains duplicate items")
    relevant = set(rel.relevant if isinstance(rel, RelevanceSet) else rel)
    for pos, item in enumerate(ranking[:k], start=1):
        if item in relevant:
            return 1.0 / pos
    return 0.0


def rr_from_order(order: np.ndarray, rel_mask: np.ndarray, k: int) -> float:
    """``rr_at_k`` on item positions: ``order`` ranks item indices, ``rel_mask`` flags relevant ones."""
    hits = np.flatnonzero(rel_mask[order[:k]])
    return 1.0 / (hits[0] + 1) if hits.size else 0.0


def _mean(xs: Sequence[float]) -> float:
    """Correctly rounded sum, one division: independent of summation order."""
    return math.fsum(xs) / len(xs)


def rr_per_experiment(case_rrs: Iterable[tuple[str, float]], em: ExperimentMap, experiment_id: str) -> float:
    """Mean RR over the sub-cases of one experiment."""
    wanted = em.cases_of(experiment_id)
    got: dict[str, float] = {}
    for cid, rr in case_rrs:
        if em.assignments.get(cid) != experiment_id:
            continue
        if cid in got:
            raise ValueError(f"case {cid!r} listed more than once")
        got[cid] = float(rr)
    missing = [c for c in wanted if c not in got]
    if missing:
        raise ValueError(f"experiment {experiment_id!r} is missing sub-cases {missing}")
    return _mean([got[c] for c in wanted])


def mrr(experiment_rrs: Sequence[float]) -> float:
    if len(experiment_rrs) == 0:
        raise ValueError("mrr of an empty list")
    return _mean(experiment_rrs)


def experiment_balanced_mean(case_values: Mapping[str, float], em: ExperimentMap) -> float:
    """Per-experiment mean over the given cases, then the mean across experiments."""
    groups: dict[str, list[float]] = {}
    for cid, v in case_values.items():
        groups.setdefault(em.experiment_of(cid), []).append(float(v))
    if not groups:
        raise ValueError("no case values")
    return _mean([_mean(v) for v in groups.values()])


def regret(ground_truth_column: Mapping[str, float], chosen_item: str) -> float:
    """Best ground-truth score minus the chosen item's score."""
    if chosen_item not in ground_truth_column:
        raise KeyError(f"unknown item {chosen_item!r}")
    return float(max(ground_truth_column.values()) - ground_truth_column[chosen_item])


def confidence_interval(samples: Sequence[float], level: float = 0.95) -> tuple[float, float, float]:
    """Normal-approximation interval ``mean +/- z * sd / sqrt(n)`` (sample sd)."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("confidence interval needs at least 2 samples")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    z = float(norm.ppf(0.5 + level / 2.0))
    mean = float(x.mean())
    half = z * float(x.std(ddof=1)) / math.sqrt(x.size)
    return mean, mean - half, mean + half
