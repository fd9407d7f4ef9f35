from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class UnderObservedColumn(ValueError):
    """A column has fewer than two observations; use the pooled marginal instead."""


@dataclass(frozen=True)
class Marginal:
    """Empirical marginal of one case column.

    ``cdf`` uses average ranks for ties and the ``n / (n + 1)`` rescaling,
    so images stay inside (0, 1). ``quantile`` is its piecewise-linear
    generalized inverse through the points ``(cdf(v), v)`` of the distinct
    observed values, clamped at the extremes.
    """

    sorted_values: np.ndarray
    ties: str = "average"

    @property
    def n(self) -> int:
        return self.sorted_values.size

    def cdf(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        less = np.searchsorted(self.sorted_values, v, side="left")
        leq = np.searchsorted(self.sorted_values, v, side="right")
        avg_rank = less + (leq - less + 1) / 2.0
        return avg_rank / (self.n + 1)

    def _knots(self) -> tuple[np.ndarray, np.ndarray]:
        uniq = np.unique(self.sorted_values)
        return self.cdf(uniq), uniq

    def quantile(self, u) -> np.ndarray:
        pos, uniq = self._knots()
        return np.interp(np.asarray(u, dtype=float), pos, uniq)


def fit_marginal(column, allow_single: bool = False) -> Marginal:
    """Fit the empirical marginal of a column's observed scores.

    Raises :class:`UnderObservedColumn` for fewer than two observations
    unless ``allow_single`` is set (used for the pooled fallback marginal).
    """
    vals = np.asarray(column, dtype=float)
    vals = vals[~np.isnan(vals)]
    if vals.size < 2 and not (allow_single and vals.size == 1):
        raise UnderObservedColumn(f"column has {vals.size} observation(s); need at least 2")
    s = np.sort(vals)
    s.setflags(write=False)
    return Marginal(s)
