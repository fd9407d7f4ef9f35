"""NumPy implementations of the hot kernels.

These are the reference versions: the compiled module in ``_ckernels`` must
agree with them to floating-point tolerance (see tests/test_kernels.py).
"""

from __future__ import annotations

import numpy as np

_RIDGE = 1e-10


def euclidean_pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def cosine_pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na[:, None] * nb[None, :]
    dot = a @ b.T
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(denom > 0.0, dot / np.where(denom > 0.0, denom, 1.0), 0.0)
    return np.clip(1.0 - sim, 0.0, 2.0)


def gower_pairwise(cont_a, cat_a, cont_b, cat_b, ranges) -> np.ndarray:
    n_feat = cont_a.shape[1] + cat_a.shape[1]
    if n_feat == 0:
        return np.zeros((cont_a.shape[0], cont_b.shape[0]))
    cont = np.abs(cont_a[:, None, :] - cont_b[None, :, :]) / ranges
    total = np.minimum(cont, 1.0).sum(axis=2)
    total = total + (cat_a[:, None, :] != cat_b[None, :, :]).sum(axis=2)
    return total / n_feat


def stagger_max_run(values: np.ndarray, amp_frac: float) -> int:
    """Longest run of consecutive qualifying direction changes in a profile."""
    v = np.asarray(values, dtype=float)
    span = v.max() - v.min()
    if v.size < 3 or span == 0.0:
        return 0
    d = np.diff(v)
    thr = amp_frac * span
    big = np.abs(d) > thr
    sgn = np.sign(d)
    change = (sgn[:-1] * sgn[1:] < 0) & big[:-1] & big[1:]
    best = run = 0
    for c in change:
        run = run + 1 if c else 0
        best = max(best, run)
    return best


def _batched_inv(m: np.ndarray) -> np.ndarray:
    return np.linalg.inv(m)


def lowrank_posterior_mean(z, mask, w, sigma) -> np.ndarray:
    """Posterior mean of the row factors given observed latent entries."""
    d = w.shape[1]
    zf = np.where(mask, z, 0.0)
    mf = mask.astype(float)
    gram = np.einsum("ij,jk,jl->ikl", mf, w, w) + sigma * np.eye(d)
    rhs = zf @ w
    return np.linalg.solve(gram, rhs[..., None])[..., 0]


def lowrank_em_step(z, mask, w, sigma):
    """One EM update of the low-rank-plus-noise latent model.

    Returns the unnormalised loadings, noise variance and the observed-data
    log-likelihood evaluated at the incoming parameters.
    """
    n, p = z.shape
    d = w.shape[1]
    zf = np.where(mask, z, 0.0)
    mf = mask.astype(float)
    gram = np.einsum("ij,jk,jl->ikl", mf, w, w) + sigma * np.eye(d)
    ginv = _batched_inv(gram)
    rhs = zf @ w
    m = np.einsum("ikl,il->ik", ginv, rhs)
    ss = sigma * ginv + np.einsum("ik,il->ikl", m, m)

    n_obs_row = mf.sum(axis=1)
    _, logdet = np.linalg.slogdet(gram)
    quad = ((zf * zf).sum(axis=1) - (rhs * m).sum(axis=1)) / sigma
    logdet_cov = (n_obs_row - d) * np.log(sigma) + logdet
    loglik = -0.5 * float(np.sum(logdet_cov + quad + n_obs_row * np.log(2.0 * np.pi)))

    a = np.einsum("ij,ikl->jkl", mf, ss) + _RIDGE * np.eye(d)
    b = zf.T @ m
    has = mf.sum(axis=0) > 0
    w_new = w.copy()
    if has.any():
        w_new[has] = np.linalg.solve(a[has], b[has][..., None])[..., 0]
    total = float(mf.sum())
    resid = float((zf * zf).sum() - (w_new[has] * b[has]).sum())
    sigma_new = resid / total if total > 0 else sigma
    return w_new, sigma_new, loglik
