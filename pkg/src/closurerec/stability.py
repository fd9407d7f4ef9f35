"""Detection of staggering (spatial zigzag) profiles and zeroing of unstable entries.

A direction change sits between two successive differences of strictly
opposite sign, both larger in magnitude than ``amplitude_fraction`` of the
profile's range. A profile is flagged when at least ``min_changes`` such
changes occur back to back. Zero differences break a run.
"""

from __future__ import annotations

from typing import Mapping

import numpy as np

from . import _kernels
from .domain import DataError, PerformanceMatrix

MIN_CHANGES = 5
AMPLITUDE_FRACTION = 0.01


def longest_change_run(profile, amplitude_fraction: float = AMPLITUDE_FRACTION) -> int:
    p = np.asarray(profile, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("profile needs at least 2 values")
    if not np.isfinite(p).all():
        raise ValueError("profile values must be finite")
    return _kernels.stagger_max_run(p, amplitude_fraction)


def detect_staggering(
    profile,
    min_changes: int = MIN_CHANGES,
    amplitude_fraction: float = AMPLITUDE_FRACTION,
) -> bool:
    return longest_change_run(profile, amplitude_fraction) >= min_changes


def apply_stability_zeroing(
    m: PerformanceMatrix, flags: Mapping[tuple[str, str], bool]
) -> PerformanceMatrix:
    """Set flagged observed entries, keyed ``(item_id, case_id)``, to 0.0."""
    vals = np.array(m.values, copy=True)
    mask = m.observed
    for (item, case), flagged in flags.items():
        if not flagged:
            continue
        i, j = m.item_index(item), m.case_index(case)
        if not mask[i, j]:
            raise DataError(f"stability flag on missing entry ({item}, {case})")
        vals[i, j] = 0.0
    return m.with_values(vals, mask)
