from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from closurerec.domain import ExperimentMap
from closurerec.evaluation import (
    MetricRecord,
    confidence_interval,
    experiment_balanced_mean,
    mrr,
    regret,
    relevance_mask,
    relevant_items,
    rr_at_k,
    rr_from_order,
    rr_per_experiment,
)

from .oracles import rr_scan


def test_relevance_best_090_includes_085():
    col = {"a": 0.90, "b": 0.85, "c": 0.849, "d": 0.2}
    rel = relevant_items(col)
    assert set(rel.relevant) == {"a", "b"}
    assert rel.best_performance == 0.90


def test_relevance_all_equal():
    rel = relevant_items({"a": 0.4, "b": 0.4, "c": 0.4})
    assert set(rel.relevant) == {"a", "b", "c"}


def test_relevance_threshold_zero_is_argmax_set():
    rel = relevant_items({"a": 0.7, "b": 0.7, "c": 0.69999}, threshold=0.0)
    assert set(rel.relevant) == {"a", "b"}


def test_relevance_ranked_best_first():
    assert relevant_items({"a": 0.86, "b": 0.9, "c": 0.88}).relevant == ("b", "c", "a")


def test_relevance_empty_column_errors():
    with pytest.raises(ValueError):
        relevant_items({})


def test_relevance_mask_matches_mapping_form():
    rng = np.random.default_rng(0)
    truth = rng.uniform(size=(6, 4))
    mask = relevance_mask(truth)
    for j in range(4):
        col = {f"i{r}": truth[r, j] for r in range(6)}
        assert {f"i{r}" for r in np.flatnonzero(mask[:, j])} == set(relevant_items(col).relevant)


def test_rr_positions():
    assert rr_at_k(["a", "b", "c"], {"a"}, 1) == 1.0
    assert rr_at_k(["x", "a", "b"], {"a", "b"}, 3) == 0.5
    assert rr_at_k(["x", "y", "z", "a"], {"a"}, 3) == 0.0


def test_rr_k_beyond_list_length():
    assert rr_at_k(["x", "a"], {"a"}, 10) == 0.5


def test_rr_argument_errors():
    with pytest.raises(ValueError):
        rr_at_k(["a"], {"a"}, 0)
    with pytest.raises(ValueError):
        rr_at_k(["a", "a"], {"a"}, 1)


def test_rr_per_experiment():
    em = ExperimentMap({"c1": "E", "c2": "E", "c3": "E", "d": "F"})
    assert rr_per_experiment([("d", 0.5)], em, "F") == 0.5
    assert rr_per_experiment([("c1", 1.0), ("c2", 0.5), ("c3", 0.0), ("d", 1.0)], em, "E") == 0.5


def test_rr_per_experiment_missing_or_duplicate_case():
    em = ExperimentMap({"c1": "E", "c2": "E"})
    with pytest.raises(ValueError):
        rr_per_experiment([("c1", 1.0)], em, "E")
    with pytest.raises(ValueError):
        rr_per_experiment([("c1", 1.0), ("c1", 1.0), ("c2", 0.0)], em, "E")


def test_rr_per_experiment_39_equal_cases():
    em = ExperimentMap({f"c{i}": "E" for i in range(39)})
    assert rr_per_experiment([(f"c{i}", 1 / 3) for i in range(39)], em, "E") == pytest.approx(1 / 3)


def test_mrr_values():
    assert mrr([0.4] * 17) == pytest.approx(0.4)
    assert mrr([1.0, 0.0]) == 0.5
    with pytest.raises(ValueError):
        mrr([])


def test_two_level_mean_differs_from_flat():
    em = ExperimentMap({**{f"a{i}": "A" for i in range(39)}, "b": "B"})
    vals = {**{f"a{i}": 0.0 for i in range(39)}, "b": 1.0}
    assert experiment_balanced_mean(vals, em) == 0.5


def test_regret_values():
    assert regret({"a": 0.8, "b": 0.65}, "a") == 0.0
    assert regret({"a": 0.80, "b": 0.65}, "b") == pytest.approx(0.15)
    assert regret({"a": 0.82, "b": 0.81}, "b") == pytest.approx(0.01)
    with pytest.raises(KeyError):
        regret({"a": 0.8}, "zz")


def test_ci_constant_samples_zero_width():
    assert confidence_interval([0.3, 0.3, 0.3]) == pytest.approx((0.3, 0.3, 0.3))


def test_ci_two_samples_hand_value():
    mean, lo, hi = confidence_interval([0.0, 1.0])
    half = 1.959964 * (math.sqrt(0.5) / math.sqrt(2))
    assert mean == 0.5
    assert hi - mean == pytest.approx(half, rel=1e-6)
    assert mean - lo == pytest.approx(0.980, abs=1e-3)


def test_ci_standard_normal_monte_carlo():
    x = np.random.default_rng(0).standard_normal(10_000)
    mean, lo, hi = confidence_interval(x)
    assert abs(mean) < 0.03
    assert hi - mean == pytest.approx(0.0196, abs=1e-3)


def test_ci_errors():
    with pytest.raises(ValueError):
        confidence_interval([1.0])
    with pytest.raises(ValueError):
        confidence_interval([1.0, 2.0], level=1.0)


def test_metric_record_fields():
    r = MetricRecord("global", "mrr@1", 0.5, 0.4, 0.6)
    assert r.ci_low <= r.value <= r.ci_high


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=10), st.floats(0, 0.5))
def test_relevance_contract(vals, thr):
    col = {f"i{n}": v for n, v in enumerate(vals)}
    rel = relevant_items(col, thr)
    best = max(vals)
    assert max(col, key=col.get) in rel
    assert all(col[i] >= best - thr - 1e-9 for i in rel.relevant)
    exact = relevant_items(col, 0.0)
    assert set(exact.relevant) == {i for i, v in col.items() if v == best}


@settings(max_examples=200, deadline=None)
@given(st.permutations(list(range(8))), st.sets(st.integers(0, 7)), st.integers(1, 10))
def test_rr_matches_scan_and_order_form(ranking, relevant, k):
    assert rr_at_k(ranking, relevant, k) == rr_scan(ranking, relevant, k)
    mask = np.zeros(8, dtype=bool)
    mask[list(relevant)] = True
    assert rr_from_order(np.array(ranking), mask, k) == rr_scan(ranking, relevant, k)


@settings(max_examples=100, deadline=None)
@given(st.permutations(list(range(6))), st.integers(0, 5), st.integers(1, 5))
def test_rr_monotone_in_k_and_rank(ranking, target, k):
    r_k = rr_at_k(ranking, {target}, k)
    assert rr_at_k(ranking, {target}, k + 1) >= r_k
    pos = ranking.index(target)
    if pos > 0:
        moved = list(ranking)
        moved[pos - 1], moved[pos] = moved[pos], moved[pos - 1]
        assert rr_at_k(moved, {target}, k) >= r_k


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=8))
def test_oracle_regret_zero(vals):
    col = {f"i{n}": v for n, v in enumerate(vals)}
    assert regret(col, max(col, key=col.get)) == 0.0
    assert all(regret(col, i) >= 0 for i in col)
