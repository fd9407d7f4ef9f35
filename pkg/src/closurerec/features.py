"""Case metadata encoding, case-case distances and nearest-neighbour search.

Continuous features are min-max scaled with the schema's dataset-wide
bounds and concatenated with one-hot categorical blocks. Euclidean and
cosine distances act on that encoded vector; Gower acts on the raw mixed
features so a categorical mismatch counts once rather than twice.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .domain import DataError

log = logging.getLogger(__name__)

METRICS = ("euclidean", "cosine", "gower")


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered categorical options and continuous (min, max) bounds."""

    categorical: tuple[tuple[str, tuple[str, ...]], ...] = ()
    continuous: tuple[tuple[str, float, float], ...] = ()

    def __post_init__(self) -> None:
        cat = tuple((str(n), tuple(str(o) for o in opts)) for n, opts in self.categorical)
        cont = tuple((str(n), float(lo), float(hi)) for n, lo, hi in self.continuous)
        object.__setattr__(self, "categorical", cat)
        object.__setattr__(self, "continuous", cont)
        names = [n for n, _ in cat] + [n for n, _, _ in cont]
        if len(set(names)) != len(names):
            raise DataError("feature names must be unique across categorical and continuous")
        for n, opts in cat:
            if len(opts) < 2:
                raise DataError(f"categorical feature {n!r} needs at least 2 options")
            if len(set(opts)) != len(opts):
                raise DataError(f"categorical feature {n!r} has duplicate options")
        for n, lo, hi in cont:
            if not lo < hi:
                raise DataError(f"continuous feature {n!r} needs min < max, got [{lo}, {hi}]")

    @property
    def n_features(self) -> int:
        return len(self.categorical) + len(self.continuous)

    @property
    def encoded_dim(self) -> int:
        return len(self.continuous) + sum(len(o) for _, o in self.categorical)

    def layout(self) -> tuple[tuple[str, str], ...]:
        out = [(n, "scalar") for n, _, _ in self.continuous]
        for n, opts in self.categorical:
            out.extend((n, o) for o in opts)
        return tuple(out)

    def to_json(self) -> dict:
        return {
            "categorical": [{"name": n, "options": list(o)} for n, o in self.categorical],
            "continuous": [{"name": n, "min": lo, "max": hi} for n, lo, hi in self.continuous],
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "FeatureSchema":
        try:
            cat = tuple((d["name"], tuple(d["options"])) for d in doc.get("categorical", []))
            cont = tuple((d["name"], d["min"], d["max"]) for d in doc.get("continuous", []))
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed feature schema: {exc}") from exc
        return cls(cat, cont)


@dataclass(frozen=True)
class CaseFeatures:
    case_id: str
    categorical_values: Mapping[str, str] = field(default_factory=dict)
    continuous_values: Mapping[str, float] = field(default_factory=dict)

    def check(self, schema: FeatureSchema) -> None:
        for name, opts in schema.categorical:
            if name not in self.categorical_values:
                raise DataError(f"case {self.case_id!r}: missing categorical feature {name!r}")
            if self.categorical_values[name] not in opts:
                raise DataError(
                    f"case {self.case_id!r}: unknown option "
                    f"{self.categorical_values[name]!r} for feature {name!r}"
                )
        for name, _, _ in schema.continuous:
            if name not in self.continuous_values:
                raise DataError(f"case {self.case_id!r}: missing continuous feature {name!r}")
            if not np.isfinite(float(self.continuous_values[name])):
                raise DataError(f"case {self.case_id!r}: non-finite value for {name!r}")


class CaseFeatureTable(dict):
    """``case_id -> CaseFeatures`` mapping."""

    @classmethod
    def from_cases(cls, cases: Iterable[CaseFeatures]) -> "CaseFeatureTable":
        table = cls()
        for c in cases:
            if c.case_id in table:
                raise DataError(f"duplicate features for case {c.case_id!r}")
            table[c.case_id] = c
        return table

    def subset(self, case_ids: Iterable[str]) -> list[CaseFeatures]:
        missing = [c for c in case_ids if c not in self]
        if missing:
            raise DataError(f"no features for cases: {missing}")
        return [self[c] for c in case_ids]


@dataclass(frozen=True)
class EncodedVector:
    values: np.ndarray
    layout: tuple[tuple[str, str], ...]


def _scaled(value: float, lo: float, hi: float, name: str = "", case_id: str = "") -> float:
    u = (float(value) - lo) / (hi - lo)
    if u < 0.0 or u > 1.0:
        log.warning("feature %r of case %r outside schema range; clamped", name, case_id)
        u = min(max(u, 0.0), 1.0)
    return u


def encode_case(f: CaseFeatures, s: FeatureSchema) -> EncodedVector:
    """Scaled continuous features followed by one-hot categorical blocks."""
    f.check(s)
    out = [
        _scaled(f.continuous_values[n], lo, hi, n, f.case_id) for n, lo, hi in s.continuous
    ]
    for name, opts in s.categorical:
        block = [0.0] * len(opts)
        block[opts.index(f.categorical_values[name])] = 1.0
        out.extend(block)
    return EncodedVector(np.asarray(out, dtype=float), s.layout())


@dataclass(frozen=True)
class _RawBlock:
    """Feature rows in the array form the distance kernels consume."""

    case_ids: tuple[str, ...]
    encoded: np.ndarray  # (n, encoded_dim)
    scaled_cont: np.ndarray  # (n, n_cont), clamped to [0, 1]
    raw_cont: np.ndarray  # (n, n_cont), physical units
    cat_codes: np.ndarray  # (n, n_cat) int


def _raw_block(cases: Sequence[CaseFeatures], s: FeatureSchema) -> _RawBlock:
    n = len(cases)
    enc = np.empty((n, s.encoded_dim))
    raw = np.empty((n, len(s.continuous)))
    codes = np.empty((n, len(s.categorical)), dtype=np.int64)
    for r, c in enumerate(cases):
        enc[r] = encode_case(c, s).values
        for k, (name, _, _) in enumerate(s.continuous):
            raw[r, k] = float(c.continuous_values[name])
        for k, (name, opts) in enumerate(s.categorical):
            codes[r, k] = opts.index(c.categorical_values[name])
    return _RawBlock(
        tuple(c.case_id for c in cases), enc, enc[:, : len(s.continuous)].copy(), raw, codes
    )


def _ranges(s: FeatureSchema) -> np.ndarray:
    return np.array([hi - lo for _, lo, hi in s.continuous], dtype=float)


def distance(a, b, metric: str, s: FeatureSchema) -> float:
    """Distance between two cases, given as :class:`CaseFeatures` or :class:`EncodedVector`.

    Gower on encoded vectors falls back to the clamped scaled values and
    one-hot block equality, which agrees with the raw definition whenever
    both cases lie inside the schema bounds.
    """
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if type(a) is not type(b):
        raise DataError("both operands must be CaseFeatures or both EncodedVector")
    if isinstance(a, CaseFeatures):
        if metric == "gower":
            blk = _raw_block([a, b], s)
            d = _kernels.gower_pairwise(
                blk.raw_cont[:1], blk.cat_codes[:1], blk.raw_cont[1:], blk.cat_codes[1:], _ranges(s)
            )
            return float(d[0, 0])
        a, b = encode_case(a, s), encode_case(b, s)
    if a.layout != s.layout() or b.layout != s.layout():
        raise DataError("encoded vectors do not match the schema layout")
    va, vb = a.values[None, :], b.values[None, :]
    if metric == "euclidean":
        return float(_kernels.euclidean_pairwise(va, vb)[0, 0])
    if metric == "cosine":
        if not va.any() and not vb.any():
            raise DataError("cosine distance undefined for two zero vectors")
        return float(_kernels.cosine_pairwise(va, vb)[0, 0])
    n_cont = len(s.continuous)
    cont = np.abs(a.values[:n_cont] - b.values[:n_cont])
    total = float(np.minimum(cont, 1.0).sum())
    pos = n_cont
    for _, opts in s.categorical:
        ia = int(np.argmax(a.values[pos : pos + len(opts)]))
        ib = int(np.argmax(b.values[pos : pos + len(opts)]))
        total += float(ia != ib)
        pos += len(opts)
    return total / s.n_features


class FeatureIndex:
    """Precomputed feature arrays for a fixed set of cases.

    Used on the hot path of cross-validation, where the same candidate
    pool is queried for every metric and many ``k``.
    """

    def __init__(self, cases: Sequence[CaseFeatures], schema: FeatureSchema) -> None:
        self.schema = schema
        self._block = _raw_block(list(cases), schema)
        self._pos = {c: i for i, c in enumerate(self._block.case_ids)}
        self._ranges = _ranges(schema)

    @property
    def case_ids(self) -> tuple[str, ...]:
        return self._block.case_ids

    def _rows(self, ids: Sequence[str]) -> np.ndarray:
        return np.array([self._pos[c] for c in ids], dtype=np.int64)

    def pairwise(self, query_ids: Sequence[str], cand_ids: Sequence[str], metric: str) -> np.ndarray:
        q, c = self._rows(query_ids), self._rows(cand_ids)
        b = self._block
        if metric == "euclidean":
            return _kernels.euclidean_pairwise(b.encoded[q], b.encoded[c])
        if metric == "cosine":
            return _kernels.cosine_pairwise(b.encoded[q], b.encoded[c])
        if metric == "gower":
            return _kernels.gower_pairwise(
                b.raw_cont[q], b.cat_codes[q], b.raw_cont[c], b.cat_codes[c], self._ranges
            )
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")

    def neighbour_order(self, query_ids, cand_ids, metric: str) -> tuple[np.ndarray, np.ndarray]:
        """Per query: candidate positions sorted by (distance, case_id), and the sorted distances."""
        d = self.pairwise(query_ids, cand_ids, metric)
        lex = np.argsort(np.array(cand_ids, dtype=object), kind="stable")
        tie_rank = np.empty(len(cand_ids), dtype=np.int64)
        tie_rank[lex] = np.arange(len(cand_ids))
        order = np.lexsort((np.broadcast_to(tie_rank, d.shape), d), axis=1)
        return order, np.take_along_axis(d, order, axis=1)


def nearest_neighbors(
    q: CaseFeatures,
    candidates: Sequence[CaseFeatures],
    k: int,
    metric: str,
    s: FeatureSchema,
) -> list[tuple[str, float]]:
    """The ``min(k, len(candidates))`` closest candidates, ascending, ties by case_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not candidates:
        raise ValueError("candidate list is empty")
    pool = list(candidates)
    qid = "\x00query"
    while any(c.case_id == qid for c in pool):
        qid += "_"
    query = CaseFeatures(qid, q.categorical_values, q.continuous_values)
    index = FeatureIndex([query, *pool], s)
    cand_ids = [c.case_id for c in pool]
    if metric == "cosine" and not index._block.encoded[0].any():
        raise DataError("cosine distance undefined for a zero query vector")
    order, dist = index.neighbour_order([qid], cand_ids, metric)
    kk = min(k, len(pool))
    return [(cand_ids[i], float(d)) for i, d in zip(order[0, :kk], dist[0, :kk])]
