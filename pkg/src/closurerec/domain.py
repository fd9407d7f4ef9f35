"""Core data types: the item x case performance matrix and experiment grouping.

Orientation is fixed: items are rows, cases are columns. Missingness is an
explicit boolean mask; a zero is a legitimate observed performance (failed
or unstable simulation) and is never treated as missing.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .tracing import record_read


class DataError(ValueError):
    """Raised when input data violates a structural contract."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


class PerformanceMatrix:
    """Items x cases grid of scores in [0, 1] with explicit missingness.

    Parameters
    ----------
    values : array_like, shape (n_items, n_cases)
        Scores. Entries where ``observed`` is False are ignored and stored as NaN.
    item_ids, case_ids : sequence of str
        Row and column labels.
    observed : array_like of bool, optional
        Presence mask. When omitted it is derived as ``~isnan(values)``.

    The constructor does not enforce the [0, 1] range or id uniqueness so
    that :func:`validate_matrix` can report such problems; everything else
    in the package assumes a validated matrix.
    """

    __slots__ = ("_values", "_observed", "item_ids", "case_ids", "_case_pos", "_item_pos")

    def __init__(
        self,
        values,
        item_ids: Sequence[str],
        case_ids: Sequence[str],
        observed=None,
    ) -> None:
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 2:
            raise DataError(f"values must be 2-D, got shape {vals.shape}")
        if observed is None:
            mask = ~np.isnan(vals)
        else:
            mask = np.asarray(observed, dtype=bool)
            if mask.shape != vals.shape:
                raise DataError(f"mask shape {mask.shape} does not match values {vals.shape}")
            if np.isnan(vals[mask]).any():
                raise DataError("observed entries must not be NaN")
        item_ids = tuple(str(i) for i in item_ids)
        case_ids = tuple(str(c) for c in case_ids)
        if len(item_ids) != vals.shape[0] or len(case_ids) != vals.shape[1]:
            raise DataError(
                f"id lengths ({len(item_ids)} items, {len(case_ids)} cases) "
                f"do not match grid shape {vals.shape}"
            )
        vals = np.where(mask, vals, np.nan)
        self._values = _frozen(vals)
        self._observed = _frozen(mask)
        self.item_ids = item_ids
        self.case_ids = case_ids
        self._case_pos = {c: j for j, c in enumerate(case_ids)}
        self._item_pos = {i: j for j, i in enumerate(item_ids)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Mapping[str, float | None]], item_ids=None, case_ids=None):
        """Build from ``{case_id: {item_id: score or None}}``."""
        case_ids = list(case_ids) if case_ids is not None else list(data)
        if item_ids is None:
            seen: dict[str, None] = {}
            for c in case_ids:
                for i in data[c]:
                    seen.setdefault(i, None)
            item_ids = list(seen)
        vals = np.full((len(item_ids), len(case_ids)), np.nan)
        for j, c in enumerate(case_ids):
            col = data.get(c, {})
            for r, i in enumerate(item_ids):
                v = col.get(i)
                if v is not None:
                    vals[r, j] = float(v)
        return cls(vals, item_ids, case_ids)

    # -- shape and labels ---------------------------------------------------
    @property
    def n_items(self) -> int:
        return self._values.shape[0]

    @property
    def n_cases(self) -> int:
        return self._values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._values.shape

    @property
    def observed(self) -> np.ndarray:
        return self._observed

    @property
    def values(self) -> np.ndarray:
        """Score grid, NaN where missing. Reading it is recorded by the access tracer."""
        record_read(self.case_ids)
        return self._values

    def column_values(self, case_id: str) -> np.ndarray:
        record_read((case_id,))
        return self._values[:, self.case_index(case_id)]

    def case_index(self, case_id: str) -> int:
        try:
            return self._case_pos[case_id]
        except KeyError:
            raise KeyError(f"unknown case id {case_id!r}") from None

    def item_index(self, item_id: str) -> int:
        try:
            return self._item_pos[item_id]
        except KeyError:
            raise KeyError(f"unknown item id {item_id!r}") from None

    def entry(self, item_id: str, case_id: str) -> float | None:
        i, j = self.item_index(item_id), self.case_index(case_id)
        record_read((case_id,))
        return float(self._values[i, j]) if self._observed[i, j] else None

    @property
    def is_complete(self) -> bool:
        return bool(self._observed.all())

    @property
    def n_observed(self) -> int:
        return int(self._observed.sum())

    # -- derived matrices ---------------------------------------------------
    def select_cases(self, case_ids: Sequence[str]) -> "PerformanceMatrix":
        idx = [self.case_index(c) for c in case_ids]
        return PerformanceMatrix(
            self._values[:, idx], self.item_ids, list(case_ids), self._observed[:, idx]
        )

    def with_mask(self, observed: np.ndarray) -> "PerformanceMatrix":
        """Same scores, with entries outside ``observed`` hidden (mask may only shrink)."""
        observed = np.asarray(observed, dtype=bool) & self._observed
        return PerformanceMatrix(self._values, self.item_ids, self.case_ids, observed)

    def with_values(self, values: np.ndarray, observed=None) -> "PerformanceMatrix":
        return PerformanceMatrix(values, self.item_ids, self.case_ids, observed)

    def to_dict(self) -> dict[str, dict[str, float | None]]:
        out: dict[str, dict[str, float | None]] = {}
        for j, c in enumerate(self.case_ids):
            out[c] = {
                i: (float(self._values[r, j]) if self._observed[r, j] else None)
                for r, i in enumerate(self.item_ids)
            }
        return out

    def content_key(self) -> bytes:
        """Digest input identifying this matrix's labels, mask and observed values."""
        import hashlib

        h = hashlib.sha1()
        h.update("\x1f".join(self.item_ids).encode())
        h.update(b"\x1e")
        h.update("\x1f".join(self.case_ids).encode())
        h.update(np.ascontiguousarray(self._observed).tobytes())
        h.update(np.ascontiguousarray(np.where(self._observed, self._values, 0.0)).tobytes())
        return h.digest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PerformanceMatrix):
            return NotImplemented
        return (
            self.item_ids == other.item_ids
            and self.case_ids == other.case_ids
            and np.array_equal(self._observed, other._observed)
            and np.array_equal(self._values[self._observed], other._values[other._observed])
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return (
            f"PerformanceMatrix(n_items={self.n_items}, n_cases={self.n_cases}, "
            f"observed={self.n_observed})"
        )


@dataclass(frozen=True)
class ExperimentMap:
    """Assignment of each case to exactly one experiment."""

    assignments: Mapping[str, str]
    experiment_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        assignments = {str(c): str(e) for c, e in self.assignments.items()}
        object.__setattr__(self, "assignments", assignments)
        if not self.experiment_ids:
            seen: dict[str, None] = {}
            for e in assignments.values():
                seen.setdefault(e, None)
            object.__setattr__(self, "experiment_ids", tuple(seen))
        else:
            object.__setattr__(self, "experiment_ids", tuple(str(e) for e in self.experiment_ids))
        counts = Counter(assignments.values())
        unknown = set(counts) - set(self.experiment_ids)
        if unknown:
            raise DataError(f"cases assigned to undeclared experiments: {sorted(unknown)}")
        empty = [e for e in self.experiment_ids if counts[e] == 0]
        if empty:
            raise DataError(f"experiments without cases: {empty}")
        if len(set(self.experiment_ids)) != len(self.experiment_ids):
            raise DataError("duplicate experiment ids")

    def experiment_of(self, case_id: str) -> str:
        try:
            return self.assignments[case_id]
        except KeyError:
            raise KeyError(f"case {case_id!r} has no experiment") from None

    def cases_of(self, experiment_id: str, order: Iterable[str] | None = None) -> list[str]:
        """Cases of an experiment, in ``order`` if given, else assignment order."""
        if experiment_id not in self.experiment_ids:
            raise KeyError(f"unknown experiment id {experiment_id!r}")
        src = order if order is not None else self.assignments
        return [c for c in src if self.assignments.get(c) == experiment_id]

    def restrict(self, case_ids: Iterable[str]) -> "ExperimentMap":
        keep = {c: self.assignments[c] for c in case_ids}
        exps = tuple(e for e in self.experiment_ids if e in set(keep.values()))
        return ExperimentMap(keep, exps)

    def __len__(self) -> int:
        return len(self.experiment_ids)


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[tuple[str, str], ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.issues

    def __bool__(self) -> bool:
        return self.ok


def validate_matrix(m: PerformanceMatrix) -> ValidationReport:
    """Report out-of-range entries, duplicate ids and dimension mismatches."""
    issues: list[tuple[str, str]] = []
    vals, mask = m._values, m._observed
    if len(m.item_ids) != vals.shape[0] or len(m.case_ids) != vals.shape[1]:
        issues.append(("shape", f"ids do not match grid shape {vals.shape}"))
    for kind, ids in (("item", m.item_ids), ("case", m.case_ids)):
        for ident, n in Counter(ids).items():
            if n > 1:
                issues.append((f"{kind}:{ident}", f"duplicate {kind} id {ident!r} ({n} times)"))
    bad = mask & ((vals < 0.0) | (vals > 1.0) | ~np.isfinite(vals))
    for r, c in zip(*np.nonzero(bad)):
        issues.append(
            (f"({m.item_ids[r]},{m.case_ids[c]})", f"entry {vals[r, c]!r} outside [0, 1]")
        )
    return ValidationReport(tuple(issues))


def drop_experiment(
    m: PerformanceMatrix, em: ExperimentMap, experiment_id: str
) -> tuple[PerformanceMatrix, ExperimentMap]:
    """Remove every case of one experiment, preserving column order."""
    if experiment_id not in em.experiment_ids:
        raise KeyError(f"unknown experiment id {experiment_id!r}")
    keep = [c for c in m.case_ids if em.assignments.get(c) != experiment_id]
    remaining = [c for c in em.assignments if em.assignments[c] != experiment_id]
    return m.select_cases(keep), em.restrict(remaining)


def observed_fraction(m: PerformanceMatrix) -> float:
    n = m.n_items * m.n_cases
    if n == 0:
        raise DataError("observed fraction of an empty matrix is undefined")
    return m.n_observed / n
