"""Synthetic bundles with a known cluster structure.

Experiments are grouped into latent clusters. Case features identify the
cluster, and each cluster has a designated best item, so a feature-based
recommender can be right where a case-independent one cannot. Performance is
a per-column logistic squash of a low-rank latent model, which gives bounded,
non-Gaussian marginals.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .domain import DataError, ExperimentMap, PerformanceMatrix
from .features import CaseFeatures, CaseFeatureTable, FeatureSchema
from .io import DatasetBundle

# item-factor scale of the designated best items, and the radius of the rest
_BEST_SCALE = 1.5
_OTHER_RADIUS = 0.4
_CASE_JITTER = 0.25


@dataclass(frozen=True)
class SynthConfig:
    n_items: int = 20
    n_cases: int = 40
    n_experiments: int = 8
    latent_rank: int = 2
    noise_sd: float = 0.0
    cluster_separation: float = 0.5
    n_categorical: int = 3
    n_continuous: int = 2
    sparsity_preview: float = 0.0
    rng_seed: int = 0
    n_clusters: int = 2

    def __post_init__(self) -> None:
        for name in ("n_items", "n_cases", "n_experiments", "latent_rank", "n_clusters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_categorical < 0 or self.n_continuous < 0:
            raise ValueError("feature counts must be >= 0")
        if self.n_categorical + self.n_continuous == 0:
            raise ValueError("need at least one feature")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if not 0.0 <= self.cluster_separation <= 1.0:
            raise ValueError("cluster_separation must lie in [0, 1]")
        if not 0.0 <= self.sparsity_preview < 1.0:
            raise ValueError("sparsity_preview must lie in [0, 1)")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict) -> "SynthConfig":
        return cls(**doc)


def _check_feasible(cfg: SynthConfig) -> None:
    problems = []
    if cfg.n_clusters > cfg.n_experiments:
        problems.append(f"{cfg.n_clusters} clusters > {cfg.n_experiments} experiments")
    if cfg.n_experiments > cfg.n_cases:
        problems.append(f"{cfg.n_experiments} experiments > {cfg.n_cases} cases")
    if cfg.n_clusters > cfg.n_items - 1:
        problems.append(f"{cfg.n_clusters} clusters need more than {cfg.n_items} items")
    if cfg.n_clusters > 2 * cfg.latent_rank:
        problems.append(f"{cfg.n_clusters} clusters need latent_rank >= {(cfg.n_clusters + 1) // 2}")
    if problems:
        raise DataError("infeasible synthetic config: " + "; ".join(problems))


def _cluster_directions(n_clusters: int, rank: int) -> np.ndarray:
    """+e_0, -e_0, +e_1, -e_1, ... so distinct clusters never share a best item."""
    dirs = np.zeros((n_clusters, rank))
    for c in range(n_clusters):
        dirs[c, c // 2] = 1.0 if c % 2 == 0 else -1.0
    return dirs


def _ball(rng: np.random.Generator, n: int, dim: int, radius: float) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    v /= np.maximum(np.linalg.norm(v, axis=1, keepdims=True), 1e-12)
    return v * radius * rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / dim)


def generate_synthetic(cfg: SynthConfig) -> DatasetBundle:
    """Draw a ground-truth bundle; cluster optima and transform parameters go into ``meta``."""
    _check_feasible(cfg)
    rng = np.random.default_rng(cfg.rng_seed)
    nc, d = cfg.n_clusters, cfg.latent_rank

    item_ids = tuple(f"item_{i:03d}" for i in range(cfg.n_items))
    case_ids = tuple(f"case_{j:03d}" for j in range(cfg.n_cases))
    exp_ids = tuple(f"exp_{e:02d}" for e in range(cfg.n_experiments))
    exp_of_case = np.arange(cfg.n_cases) * cfg.n_experiments // cfg.n_cases
    cluster_of_exp = np.arange(cfg.n_experiments) % nc
    cluster = cluster_of_exp[exp_of_case]

    dirs = _cluster_directions(nc, d)
    best_pos = rng.choice(cfg.n_items, size=nc + 1, replace=False)
    best_items, ref_pos = best_pos[:nc], best_pos[nc]
    g = _ball(rng, cfg.n_items, d, _OTHER_RADIUS * _BEST_SCALE)
    g[best_items] = _BEST_SCALE * dirs
    g[ref_pos] = 0.0
    h = dirs[cluster] + _ball(rng, cfg.n_cases, d, _CASE_JITTER)

    latent = g @ h.T
    if cfg.noise_sd > 0:
        latent = latent + rng.normal(0.0, cfg.noise_sd, size=latent.shape)
    slopes = rng.uniform(1.0, 2.0, size=cfg.n_cases)
    centre = 0.5 * _BEST_SCALE
    offsets = -slopes * centre + rng.uniform(-0.25, 0.25, size=cfg.n_cases)
    values = np.clip(1.0 / (1.0 + np.exp(-(slopes * latent + offsets))), 0.0, 1.0)
    matrix = PerformanceMatrix(values, item_ids, case_ids)

    schema, features = _features(cfg, rng, case_ids, cluster)
    em = ExperimentMap({c: exp_ids[e] for c, e in zip(case_ids, exp_of_case)}, exp_ids)
    meta = {
        "generator": "closurerec.synth",
        "config": cfg.to_json(),
        "cluster_of_experiment": {e: int(cluster_of_exp[i]) for i, e in enumerate(exp_ids)},
        "cluster_best_item": [item_ids[i] for i in best_items],
        "column_slope": slopes.tolist(),
        "column_offset": offsets.tolist(),
    }
    return DatasetBundle(matrix, features, schema, em, item_ids[ref_pos], meta)


def _features(cfg: SynthConfig, rng: np.random.Generator, case_ids, cluster):
    nc = cfg.n_clusters
    n_opt = max(2, nc)
    categorical = tuple(
        (f"cat_{f}", tuple(f"opt_{o}" for o in range(n_opt))) for f in range(cfg.n_categorical)
    )
    lo = np.round(rng.uniform(0.0, 100.0, size=cfg.n_continuous), 3)
    span = np.round(rng.uniform(1.0, 100.0, size=cfg.n_continuous), 3)
    continuous = tuple(
        (f"cont_{f}", float(lo[f]), float(lo[f] + span[f])) for f in range(cfg.n_continuous)
    )
    schema = FeatureSchema(categorical, continuous)

    # distinct option per cluster; clusters occupy disjoint slots on every continuous axis
    cat_codes = np.array([rng.permutation(n_opt)[:nc] for _ in range(cfg.n_categorical)]).reshape(cfg.n_categorical, nc)
    slots = np.array([rng.permutation(nc) for _ in range(cfg.n_continuous)]).reshape(cfg.n_continuous, nc)
    half = (1.0 - cfg.cluster_separation) / (2.0 * nc)
    cases = []
    for j, cid in enumerate(case_ids):
        k = cluster[j]
        cat = {name: opts[cat_codes[f, k]] for f, (name, opts) in enumerate(categorical)}
        cont = {}
        for f, (name, a, b) in enumerate(continuous):
            u = (slots[f, k] + 0.5) / nc + rng.uniform(-half, half)
            cont[name] = float(a + u * (b - a))
        cases.append(CaseFeatures(cid, cat, cont))
    return schema, CaseFeatureTable.from_cases(cases)


def preview_matrix(bundle: DatasetBundle, cfg: SynthConfig) -> PerformanceMatrix | None:
    """The ground truth sparsified at ``cfg.sparsity_preview``, or None when that is 0."""
    from .protocol import sparsify

    if cfg.sparsity_preview == 0.0:
        return None
    seed = np.random.SeedSequence([cfg.rng_seed, 1])
    return sparsify(bundle.matrix, cfg.sparsity_preview, np.random.default_rng(seed))
