from __future__ import annotations

import logging
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from closurerec.completion import CompletionConfig
from closurerec.domain import DataError, ExperimentMap, PerformanceMatrix
from closurerec.features import CaseFeatures, CaseFeatureTable, FeatureIndex, FeatureSchema
from closurerec.protocol import (
    CVConfig,
    FitCache,
    HyperGrid,
    inner_cv,
    run_nested_cv,
    sparsify,
)
from closurerec.synth import SynthConfig, generate_synthetic

FAST = CompletionConfig(method="soft_impute", rank=3, max_iterations=100)


def _bundle(**kw):
    base = dict(n_items=10, n_cases=18, n_experiments=6, latent_rank=2, rng_seed=3)
    base.update(kw)
    return generate_synthetic(SynthConfig(**base))


def _cv(**kw):
    base = dict(sparsity_levels=(0.5,), n_realisations=2, completion=FAST, grid=HyperGrid(k_values=(1, 3, 5)))
    base.update(kw)
    return CVConfig(**base)


def _run(b, cfg, **kw):
    return run_nested_cv(b.matrix, b.features, b.experiments, cfg, schema=b.schema,
                         reference_item=b.reference_item, **kw)


# -- grid and config -------------------------------------------------------------


def test_default_grid_has_27_configs_in_tiebreak_order():
    g = HyperGrid()
    cfgs = g.configs()
    assert len(g) == 27
    assert cfgs[:3] == [("euclidean", 1), ("cosine", 1), ("gower", 1)]
    assert cfgs[-1] == ("gower", 50)


def test_grid_and_config_validation():
    with pytest.raises(ValueError):
        HyperGrid(metrics=("manhattan",))
    with pytest.raises(ValueError):
        HyperGrid(k_values=(0,))
    with pytest.raises(ValueError):
        CVConfig(sparsity_levels=(1.0,))
    with pytest.raises(ValueError):
        CVConfig(selection_metric="ndcg")


def test_cv_config_json_round_trip():
    cfg = _cv(rng_seed=9, popularity_flat=True)
    assert CVConfig.from_json(cfg.to_json()) == cfg


# -- sparsify ----------------------------------------------------------------------


def test_sparsify_exact_count_and_determinism():
    m = PerformanceMatrix(np.random.default_rng(0).uniform(size=(100, 136)),
                          [f"i{r}" for r in range(100)], [f"c{c}" for c in range(136)])
    for s in (0.25, 0.5, 0.75, 0.9):
        a = sparsify(m, s, 4)
        assert m.n_items * m.n_cases - a.n_observed == round(s * 13600)
        assert a == sparsify(m, s, 4)
    assert sparsify(m, 0.0, 1) == m


def test_sparsify_keeps_observed_values():
    m = PerformanceMatrix(np.arange(12.0).reshape(3, 4), ["a", "b", "c"], ["w", "x", "y", "z"])
    out = sparsify(m, 0.5, np.random.default_rng(2))
    obs = out.observed
    assert obs.sum() == 6
    np.testing.assert_array_equal(out.values[obs], m.values[obs])


def test_sparsify_errors():
    m = PerformanceMatrix(np.array([[1.0, np.nan]]), ["a"], ["x", "y"])
    with pytest.raises(DataError):
        sparsify(m, 0.5, 0)
    with pytest.raises(ValueError):
        sparsify(m.with_mask(np.ones((1, 2), dtype=bool)), 1.0, 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.floats(0, 0.95), st.integers(0, 10_000))
def test_sparsify_count_property(n, p, s, seed):
    m = PerformanceMatrix(np.zeros((n, p)), [f"i{r}" for r in range(n)], [f"c{c}" for c in range(p)])
    assert n * p - sparsify(m, s, seed).n_observed == round(s * n * p)


# -- fit cache ----------------------------------------------------------------------


def test_fit_cache_reuses_completion():
    b = _bundle()
    sparse = sparsify(b.matrix, 0.5, 0)
    cache = FitCache()
    first = cache.complete(sparse, FAST)
    assert cache.complete(sparse, FAST) is first
    assert cache.hits == 1


# -- inner loop ---------------------------------------------------------------------


def _index(b):
    return FeatureIndex(b.features.subset(b.matrix.case_ids), b.schema)


def test_inner_cv_single_config_is_returned():
    b = _bundle()
    res = inner_cv(b.matrix, b.matrix, _index(b), b.experiments, HyperGrid(("gower",), (3,)), FAST)
    assert (res.best_metric, res.best_k) == ("gower", 3)
    assert set(res.val_mrr3) == {("gower", 3)}


def test_inner_cv_constant_matrix_picks_smallest_k_euclidean():
    b = _bundle()
    flat = b.matrix.with_values(np.full(b.matrix.shape, 0.5))
    res = inner_cv(flat, flat, _index(b), b.experiments, HyperGrid(), FAST)
    assert (res.best_metric, res.best_k) == ("euclidean", 1)
    assert len(set(res.val_mrr3.values())) == 1


def test_inner_cv_needs_two_experiments():
    b = _bundle()
    one = b.experiments.experiment_ids[0]
    cases = b.experiments.cases_of(one, order=b.matrix.case_ids)
    m = b.matrix.select_cases(cases)
    with pytest.raises(DataError):
        inner_cv(m, m, _index(b), b.experiments, HyperGrid(), FAST)


def test_inner_cv_prefers_cosine_on_directional_features():
    # two clusters lie on rays (t, 0.1t) and (0.1t, t); magnitude makes euclidean mix them up
    schema = FeatureSchema(continuous=(("u", 0.0, 10.0), ("v", 0.0, 10.0)))
    cases, cols, em = [], [], {}
    for grp, ts in (("A", (1.0, 5.0, 9.0)), ("B", (1.2, 5.2, 9.2))):
        for t in ts:
            cid = f"{grp}{t}"
            u, v = (t, 0.1 * t) if grp == "A" else (0.1 * t, t)
            cases.append(CaseFeatures(cid, {}, {"u": u, "v": v}))
            cols.append([0.9, 0.1, 0.5] if grp == "A" else [0.1, 0.9, 0.5])
            em[cid] = f"e_{cid}"
    m = PerformanceMatrix(np.array(cols).T, ["i0", "i1", "i2"], [c.case_id for c in cases])
    index = FeatureIndex(cases, schema)
    res = inner_cv(m, m, index, ExperimentMap(em), HyperGrid(("euclidean", "cosine"), (1, 2)), FAST)
    assert (res.best_metric, res.best_k) == ("cosine", 1)
    assert res.val_mrr1[("cosine", 1)] == 1.0
    assert res.val_mrr1[("euclidean", 1)] == pytest.approx(4 / 6)


# -- outer loop ---------------------------------------------------------------------


def test_nested_cv_rows_and_audit():
    b = _bundle()
    rep = _run(b, _cv())
    n_exp = len(b.experiments)
    for method in ("RS", "Pop", "MC", "Reference", "Random", "Oracle"):
        assert sum(c.method == method for c in rep.cells) == 2 * n_exp
    assert rep.leakage_audit
    assert len(rep.audits) == 2 * n_exp
    assert not rep.failures
    assert rep.grid_size == 9
    assert set(rep.analytic_random) == {"mrr@1", "mrr@3"}


def test_fault_injection_breaks_audit():
    b = _bundle()
    rep = _run(b, _cv(n_realisations=1), _keep_test_columns=True)
    assert rep.audits and not any(rep.audits.values())
    assert not rep.leakage_audit


def test_two_experiments_fall_back_with_warning(caplog):
    b = _bundle(n_experiments=2, n_cases=10)
    with caplog.at_level(logging.WARNING, logger="closurerec"):
        rep = _run(b, _cv(n_realisations=1))
    rs = [c for c in rep.cells if c.method == "RS"]
    assert len(rs) == 2
    assert all((c.metric, c.k) == ("euclidean", 1) and c.val_mrr3 is None for c in rs)
    assert "fewer than 2 training experiments" in caplog.text
    assert all(r["val_mrr@3"] is None for r in rep.table4())


def test_perfectly_learnable_at_zero_sparsity():
    b = _bundle(n_items=8, n_cases=24)
    rep = _run(b, _cv(sparsity_levels=(0.0,), n_realisations=1))
    rs = [c for c in rep.cells if c.method == "RS"]
    assert all(c.rr1 == 1.0 and c.regret == 0.0 for c in rs)


def test_oracle_rows_have_zero_regret():
    rep = _run(_bundle(), _cv())
    oracle = [c for c in rep.cells if c.method == "Oracle"]
    assert oracle and all(c.regret == 0.0 and c.rr1 == 1.0 for c in oracle)
    assert all(c.regret >= 0 for c in rep.cells)


def test_test_columns_do_not_influence_selection():
    b = _bundle()
    e = b.experiments.experiment_ids[0]
    cols = [b.matrix.case_index(c) for c in b.experiments.cases_of(e)]
    vals = b.matrix.values.copy()
    vals[:, cols] = np.random.default_rng(7).permutation(vals[:, cols].ravel()).reshape(-1, len(cols))
    scrambled = replace(b, matrix=b.matrix.with_values(vals))
    cfg = _cv()
    pick = lambda rep: [(c.realisation, c.metric, c.k, c.val_mrr3, c.val_mrr1)  # noqa: E731
                        for c in rep.cells if c.method == "RS" and c.experiment == e]
    assert pick(_run(b, cfg)) == pick(_run(scrambled, cfg))


def test_experiment_order_invariance():
    b = _bundle()
    rev = ExperimentMap(dict(b.experiments.assignments), tuple(reversed(b.experiments.experiment_ids)))
    cfg = _cv(n_realisations=1)
    key = lambda rep: sorted(  # noqa: E731
        (c.experiment, c.method, c.metric, c.k, c.rr1, c.rr3, c.regret)
        for c in rep.cells if c.method in ("RS", "Pop", "MC", "Reference", "Oracle")
    )
    assert key(_run(b, cfg)) == key(_run(replace(b, experiments=rev), cfg))


def test_threads_do_not_change_results():
    b = _bundle()
    cfg = _cv(sparsity_levels=(0.25, 0.5))
    assert _run(b, cfg, threads=1).cells == _run(b, cfg, threads=2).cells


def test_aggregate_and_tables():
    rep = _run(_bundle(), _cv(sparsity_levels=(0.25, 0.5)))
    agg = rep.aggregate()
    assert [(r["sparsity"], r["method"]) for r in agg] == [
        (0.25, "Pop"), (0.25, "MC"), (0.25, "RS"), (0.5, "Pop"), (0.5, "MC"), (0.5, "RS"),
        ("all", "Reference"), ("all", "Random"),
    ]
    ref = agg[-2]
    assert ref["mrr@3"] is None and ref["mrr@1"] is not None
    assert len(rep.table5()) == 4 and len(rep.table7()) == 4
    assert len(rep.table4()) == 2 * len(rep.experiment_ids)
    assert len(rep.table4(0.5)) == len(rep.experiment_ids)


def test_empty_report_aggregates_to_nothing():
    from closurerec.protocol import CVReport

    rep = CVReport(_cv(), ("e",))
    assert rep.aggregate() == [] and rep.table4() == []
    assert not rep.leakage_audit
    assert all(v is None for row in rep.table5() for k, v in row.items() if k != "sparsity")


def test_nested_cv_input_errors():
    b = _bundle()
    with pytest.raises(DataError):
        _run(replace(b, matrix=sparsify(b.matrix, 0.2, 0)), _cv())
    with pytest.raises(DataError):
        run_nested_cv(b.matrix, b.features, b.experiments, _cv(), schema=b.schema, reference_item="nope")
    partial = ExperimentMap({c: e for c, e in b.experiments.assignments.items() if c != b.matrix.case_ids[0]})
    with pytest.raises(DataError):
        run_nested_cv(b.matrix, b.features, partial, _cv(), schema=b.schema)


def test_case_features_table_is_used_not_order():
    b = _bundle()
    shuffled = CaseFeatureTable.from_cases(reversed(list(b.features.values())))
    cfg = _cv(n_realisations=1)
    assert _run(b, cfg).cells == _run(replace(b, features=shuffled), cfg).cells
