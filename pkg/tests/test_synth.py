from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from closurerec.domain import DataError
from closurerec.synth import SynthConfig, generate_synthetic, preview_matrix

from .oracles import rank1_lstsq


def _cluster_of_case(b):
    cl = b.meta["cluster_of_experiment"]
    return [cl[b.experiments.experiment_of(c)] for c in b.matrix.case_ids]


@pytest.mark.parametrize("seed", range(5))
def test_noise_free_argmax_is_cluster_best(seed):
    b = generate_synthetic(SynthConfig(rng_seed=seed, n_clusters=3, n_experiments=6))
    best = b.meta["cluster_best_item"]
    vals = b.matrix.values
    for j, k in enumerate(_cluster_of_case(b)):
        assert b.matrix.item_ids[int(np.argmax(vals[:, j]))] == best[k]


def test_reference_item_is_not_a_cluster_best():
    b = generate_synthetic(SynthConfig())
    assert b.reference_item in b.matrix.item_ids
    assert b.reference_item not in b.meta["cluster_best_item"]


@pytest.mark.parametrize("seed", range(3))
def test_inverse_link_recovers_low_rank_latent(seed):
    b = generate_synthetic(SynthConfig(rng_seed=seed, latent_rank=1, n_clusters=2))
    v = b.matrix.values
    logit = np.log(v / (1.0 - v))
    latent = (logit - np.array(b.meta["column_offset"])) / np.array(b.meta["column_slope"])
    s = np.linalg.svd(latent, compute_uv=False)
    assert s[1] / s[0] < 1e-8
    fit = rank1_lstsq(latent, np.ones(latent.shape, dtype=bool))
    assert np.abs(fit - latent).max() < 1e-8


def test_latent_rank_matches_config():
    b = generate_synthetic(SynthConfig(latent_rank=3, n_clusters=4))
    v = b.matrix.values
    latent = (np.log(v / (1 - v)) - np.array(b.meta["column_offset"])) / np.array(b.meta["column_slope"])
    s = np.linalg.svd(latent, compute_uv=False)
    assert s[2] / s[0] > 1e-6 and s[3] / s[0] < 1e-8


def test_deterministic_per_seed():
    a = generate_synthetic(SynthConfig(rng_seed=5, noise_sd=0.1))
    assert a == generate_synthetic(SynthConfig(rng_seed=5, noise_sd=0.1))
    assert a != generate_synthetic(SynthConfig(rng_seed=6, noise_sd=0.1))


def test_bundle_is_consistent():
    b = generate_synthetic(SynthConfig(n_cases=30, n_experiments=7, n_categorical=2, n_continuous=3))
    b.check()
    assert b.matrix.is_complete
    assert ((b.matrix.values >= 0) & (b.matrix.values <= 1)).all()
    assert len(b.experiments) == 7
    assert b.schema.n_features == 5


def test_features_separate_clusters():
    b = generate_synthetic(SynthConfig(n_clusters=2, cluster_separation=1.0, n_categorical=1, n_continuous=0))
    cl = _cluster_of_case(b)
    name = b.schema.categorical[0][0]
    opts = {k: {b.features[c].categorical_values[name] for c, kk in zip(b.matrix.case_ids, cl) if kk == k} for k in (0, 1)}
    assert len(opts[0]) == len(opts[1]) == 1 and opts[0] != opts[1]


@pytest.mark.parametrize(
    "kw",
    [
        dict(n_clusters=9, n_experiments=8),
        dict(n_experiments=50, n_cases=40),
        dict(n_items=2, n_clusters=2),
        dict(n_clusters=5, latent_rank=2),
    ],
)
def test_infeasible_configs_rejected(kw):
    with pytest.raises(DataError, match="infeasible"):
        generate_synthetic(SynthConfig(**kw))


def test_invalid_field_values():
    with pytest.raises(ValueError):
        SynthConfig(noise_sd=-1)
    with pytest.raises(ValueError):
        SynthConfig(cluster_separation=1.5)
    with pytest.raises(ValueError):
        SynthConfig(n_categorical=0, n_continuous=0)


def test_preview_matrix():
    cfg = SynthConfig(sparsity_preview=0.5)
    b = generate_synthetic(cfg)
    p = preview_matrix(b, cfg)
    assert p.n_observed == b.matrix.n_items * b.matrix.n_cases // 2
    assert preview_matrix(b, SynthConfig()) is None


def test_config_json_round_trip():
    cfg = SynthConfig(n_items=7, noise_sd=0.2)
    assert SynthConfig.from_json(cfg.to_json()) == cfg


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 4), st.integers(1, 3))
def test_any_feasible_config_generates(seed, clusters, rank):
    cfg = SynthConfig(rng_seed=seed, n_clusters=clusters, latent_rank=rank, n_items=8, n_cases=16, n_experiments=4)
    if clusters > 2 * rank:
        with pytest.raises(DataError):
            generate_synthetic(cfg)
        return
    generate_synthetic(cfg).check()
