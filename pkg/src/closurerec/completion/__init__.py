"""Matrix completion behind one interface: Gaussian copula (default) or soft-impute."""

from __future__ import annotations

from ..domain import PerformanceMatrix
from .config import CompletionConfig
from .copula import CopulaModel, fit_copula, impute
from .marginal import Marginal, UnderObservedColumn, fit_marginal
from .softimpute import soft_impute

__all__ = [
    "CompletionConfig",
    "CopulaModel",
    "Marginal",
    "UnderObservedColumn",
    "complete",
    "fit_copula",
    "fit_marginal",
    "impute",
    "soft_impute",
]


def complete(m: PerformanceMatrix, cfg: CompletionConfig | None = None) -> PerformanceMatrix:
    """Return a fully observed copy of ``m`` using the configured method."""
    cfg = cfg or CompletionConfig()
    if m.is_complete:
        return m
    if cfg.method == "soft_impute":
        return soft_impute(m, cfg)
    return impute(m, fit_copula(m, cfg))
