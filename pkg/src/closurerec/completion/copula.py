"""Low-rank Gaussian copula completion.

Each case column is mapped through its empirical CDF and the standard
normal quantile to a latent Gaussian. The latent rows (one per item) are
modelled as ``z = W s + e`` with ``s ~ N(0, I_d)`` and ``e ~ N(0, sigma I)``,
with the loadings rescaled after every EM step so the implied latent
correlation has unit diagonal. Missing entries are imputed at the
conditional latent mean and mapped back through the column marginal.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .. import _kernels
from ..domain import DataError, PerformanceMatrix
from .config import CompletionConfig
from .marginal import Marginal, UnderObservedColumn, fit_marginal

log = logging.getLogger(__name__)

_SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class CopulaModel:
    marginals: tuple[Marginal, ...]
    item_ids: tuple[str, ...]
    case_ids: tuple[str, ...]
    item_factors: np.ndarray  # (n_items, d): posterior mean row factors
    case_loadings: np.ndarray  # (n_cases, d)
    noise_variance: float
    rank: int
    converged: bool
    n_iterations: int
    loglik_trace: tuple[float, ...]
    under_observed: tuple[str, ...] = ()

    def latent_mean(self) -> np.ndarray:
        """Conditional latent mean for every (item, case) entry."""
        return self.item_factors @ self.case_loadings.T


def _latent(values: np.ndarray, mask: np.ndarray, marginals) -> np.ndarray:
    z = np.full(values.shape, np.nan)
    for j, marg in enumerate(marginals):
        rows = mask[:, j]
        z[rows, j] = norm.ppf(marg.cdf(values[rows, j]))
    return z


def _scale_to_correlation(w: np.ndarray, sigma: float) -> tuple[np.ndarray, float]:
    tr = np.sum(w * w, axis=1)
    sigma = float(np.mean(1.0 / (tr + sigma)) * sigma)
    sigma = min(max(sigma, _SIGMA_FLOOR), 1.0 - 1e-9)
    norms = np.sqrt(tr)
    scale = np.where(norms > 0, np.sqrt(1.0 - sigma) / np.where(norms > 0, norms, 1.0), 0.0)
    return w * scale[:, None], sigma


def _initialise(z, mask, rank, rng) -> tuple[np.ndarray, float]:
    n, p = z.shape
    z0 = np.where(mask, z, 0.0)
    u, s, vt = np.linalg.svd(z0, full_matrices=False)
    z_imp = (u[:, :rank] * s[:rank]) @ vt[:rank]
    z_imp[mask] = z[mask]
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.corrcoef(z_imp, rowvar=False) if n > 1 else np.eye(p)
    corr = np.atleast_2d(np.nan_to_num(corr, nan=0.0))
    np.fill_diagonal(corr, 1.0)
    evals, evecs = np.linalg.eigh(corr)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    sigma = float(np.mean(evals[rank:])) if rank < p else 0.1
    sigma = min(max(sigma, 1e-2), 0.9)
    w = evecs[:, :rank] * np.sqrt(np.maximum(evals[:rank] - sigma, 1e-6))
    if not np.any(np.abs(w) > 1e-8):
        w = rng.standard_normal((p, rank)) * 0.1
    return _scale_to_correlation(w, sigma)


def fit_copula(m: PerformanceMatrix, cfg: CompletionConfig | None = None) -> CopulaModel:
    """Fit marginals and the low-rank latent model by expectation-maximisation.

    Columns with fewer than two observations use the pooled marginal of all
    observed entries. Hitting ``max_iterations`` is not an error; the model
    comes back with ``converged=False``.
    """
    cfg = cfg or CompletionConfig()
    if m.n_items == 0 or m.n_cases == 0:
        raise DataError("cannot fit a copula to an empty matrix")
    values, mask = m.values, m.observed
    if not mask.any():
        raise DataError("cannot fit a copula without observed entries")

    pooled = fit_marginal(values[mask], allow_single=True)
    marginals: list[Marginal] = []
    under: list[str] = []
    for j, cid in enumerate(m.case_ids):
        try:
            marginals.append(fit_marginal(values[mask[:, j], j]))
        except UnderObservedColumn:
            marginals.append(pooled)
            under.append(cid)

    z = _latent(values, mask, marginals)
    rank = min(cfg.rank, m.n_items, m.n_cases)
    rng = np.random.default_rng(cfg.rng_seed)
    w, sigma = _initialise(z, mask, rank, rng)

    trace: list[float] = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        w_new, sigma_new, ll = _kernels.lowrank_em_step(z, mask, w, sigma)
        w_new, sigma_new = _scale_to_correlation(w_new, max(sigma_new, _SIGMA_FLOOR))
        trace.append(ll)
        change = max(
            np.linalg.norm(w_new - w) / max(np.linalg.norm(w), 1e-12),
            abs(sigma_new - sigma) / sigma,
        )
        w, sigma = w_new, sigma_new
        if change < cfg.convergence_tolerance:
            converged = True
            break
    if not converged:
        log.debug("copula EM stopped at max_iterations=%d without converging", cfg.max_iterations)

    factors = _kernels.lowrank_posterior_mean(z, mask, w, sigma)
    factors.setflags(write=False)
    w.setflags(write=False)
    return CopulaModel(
        marginals=tuple(marginals),
        item_ids=m.item_ids,
        case_ids=m.case_ids,
        item_factors=factors,
        case_loadings=w,
        noise_variance=float(sigma),
        rank=rank,
        converged=converged,
        n_iterations=it,
        loglik_trace=tuple(trace),
        under_observed=tuple(under),
    )


def impute(m: PerformanceMatrix, model: CopulaModel) -> PerformanceMatrix:
    """Fill missing entries with ``F_j^-1(Phi(conditional latent mean))``; keep observed ones."""
    if m.item_ids != model.item_ids or m.case_ids != model.case_ids:
        raise DataError("matrix does not match the fitted model's items and cases")
    mask = m.observed
    out = np.array(m.values, copy=True)
    if mask.all():
        return m.with_values(out)
    zhat = model.latent_mean()
    u = norm.cdf(zhat)
    for j, marg in enumerate(model.marginals):
        miss = ~mask[:, j]
        if miss.any():
            out[miss, j] = marg.quantile(u[miss, j])
    out[~mask] = np.clip(out[~mask], 0.0, 1.0)
    return m.with_values(out, np.ones_like(mask))
