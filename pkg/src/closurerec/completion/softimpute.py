from __future__ import annotations

import logging

import numpy as np

from ..domain import DataError, PerformanceMatrix
from .config import CompletionConfig

log = logging.getLogger(__name__)


DEFAULT_LAMBDA_FRACTION = 0.02


def default_lambda(filled: np.ndarray) -> float:
    """Shrinkage used when none is configured: a fixed fraction of the top singular value."""
    return DEFAULT_LAMBDA_FRACTION * float(np.linalg.svd(filled, compute_uv=False)[0])


def soft_impute(m: PerformanceMatrix, cfg: CompletionConfig | None = None) -> PerformanceMatrix:
    """Iterative soft-thresholded SVD completion.

    Missing entries start at their column mean (the global mean for columns
    with fewer than two observations). Each sweep shrinks the singular values
    of the current fill by ``lambda`` and re-imposes the observed entries.
    """
    cfg = cfg or CompletionConfig(method="soft_impute")
    if m.n_items == 0 or m.n_cases == 0:
        raise DataError("cannot complete an empty matrix")
    x, mask = m.values, m.observed
    if mask.all():
        return m.with_values(np.array(x, copy=True))
    if not mask.any():
        raise DataError("cannot complete a matrix without observed entries")

    global_mean = float(x[mask].mean())
    counts = mask.sum(axis=0)
    sums = np.where(mask, x, 0.0).sum(axis=0)
    col_means = np.where(counts >= 2, sums / np.maximum(counts, 1), global_mean)
    filled = np.where(mask, x, col_means[None, :])

    lam = cfg.regularisation if cfg.regularisation is not None else default_lambda(filled)
    for it in range(cfg.max_iterations):
        u, s, vt = np.linalg.svd(filled, full_matrices=False)
        s = np.maximum(s - lam, 0.0)
        rebuilt = (u * s) @ vt
        new = np.where(mask, x, rebuilt)
        change = np.sum((new - filled) ** 2) / max(np.sum(filled**2), 1e-300)
        filled = new
        if change < cfg.convergence_tolerance:
            break
    else:
        log.debug("soft-impute stopped at max_iterations=%d", cfg.max_iterations)

    filled[~mask] = np.clip(filled[~mask], 0.0, 1.0)
    return m.with_values(filled, np.ones_like(mask))
