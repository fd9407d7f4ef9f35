# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Signatures and results mirror ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, log, M_PI

cnp.import_array()

cdef double RIDGE = 1e-10


def euclidean_pairwise(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], dim = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, t
    out = np.empty((na, nb))
    cdef double[:, ::1] o = out
    for i in range(na):
        for j in range(nb):
            acc = 0.0
            for k in range(dim):
                t = a[i, k] - b[j, k]
                acc += t * t
            o[i, j] = sqrt(acc)
    return out


def cosine_pairwise(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], dim = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double dot, denom, v
    out = np.empty((na, nb))
    cdef double[:, ::1] o = out
    cdef double[::1] norm_a = np.empty(na)
    cdef double[::1] norm_b = np.empty(nb)
    for i in range(na):
        dot = 0.0
        for k in range(dim):
            dot += a[i, k] * a[i, k]
        norm_a[i] = sqrt(dot)
    for j in range(nb):
        dot = 0.0
        for k in range(dim):
            dot += b[j, k] * b[j, k]
        norm_b[j] = sqrt(dot)
    for i in range(na):
        for j in range(nb):
            denom = norm_a[i] * norm_b[j]
            if denom > 0.0:
                dot = 0.0
                for k in range(dim):
                    dot += a[i, k] * b[j, k]
                v = 1.0 - dot / denom
            else:
                v = 1.0
            if v < 0.0:
                v = 0.0
            elif v > 2.0:
                v = 2.0
            o[i, j] = v
    return out


def gower_pairwise(const double[:, ::1] cont_a, const long[:, ::1] cat_a,
                   const double[:, ::1] cont_b, const long[:, ::1] cat_b,
                   const double[::1] ranges):
    cdef Py_ssize_t na = cont_a.shape[0], nb = cont_b.shape[0]
    cdef Py_ssize_t nc = cont_a.shape[1], nk = cat_a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, t
    cdef double nfeat = <double>(nc + nk)
    out = np.zeros((na, nb))
    cdef double[:, ::1] o = out
    if nc + nk == 0:
        return out
    for i in range(na):
        for j in range(nb):
            acc = 0.0
            for k in range(nc):
                t = fabs(cont_a[i, k] - cont_b[j, k]) / ranges[k]
                acc += t if t < 1.0 else 1.0
            for k in range(nk):
                if cat_a[i, k] != cat_b[j, k]:
                    acc += 1.0
            o[i, j] = acc / nfeat
    return out


def stagger_max_run(const double[::1] v, double amp_frac):
    cdef Py_ssize_t n = v.shape[0], t
    cdef double lo, hi, thr, d0, d1
    cdef int run = 0, best = 0
    if n < 3:
        return 0
    lo = v[0]
    hi = v[0]
    for t in range(1, n):
        if v[t] < lo:
            lo = v[t]
        if v[t] > hi:
            hi = v[t]
    if hi - lo == 0.0:
        return 0
    thr = amp_frac * (hi - lo)
    for t in range(n - 2):
        d0 = v[t + 1] - v[t]
        d1 = v[t + 2] - v[t + 1]
        if fabs(d0) > thr and fabs(d1) > thr and ((d0 > 0.0 and d1 < 0.0) or (d0 < 0.0 and d1 > 0.0)):
            run += 1
            if run > best:
                best = run
        else:
            run = 0
    return best


cdef int _cholesky(double[:, ::1] a, Py_ssize_t d) nogil:
    """In-place lower Cholesky factor of the leading d x d block. Returns 0 on success."""
    cdef Py_ssize_t i, j, k
    cdef double s
    for j in range(d):
        s = a[j, j]
        for k in range(j):
            s -= a[j, k] * a[j, k]
        if s <= 0.0:
            return 1
        a[j, j] = sqrt(s)
        for i in range(j + 1, d):
            s = a[i, j]
            for k in range(j):
                s -= a[i, k] * a[j, k]
            a[i, j] = s / a[j, j]
    return 0


cdef void _chol_solve(double[:, ::1] l, double[::1] x, Py_ssize_t d) nogil:
    """Solve (L L^T) y = x in place."""
    cdef Py_ssize_t i, k
    cdef double s
    for i in range(d):
        s = x[i]
        for k in range(i):
            s -= l[i, k] * x[k]
        x[i] = s / l[i, i]
    for i in range(d - 1, -1, -1):
        s = x[i]
        for k in range(i + 1, d):
            s -= l[k, i] * x[k]
        x[i] = s / l[i, i]


cdef int _row_posterior(const double[:, ::1] z, const unsigned char[:, ::1] mask,
                        const double[:, ::1] w, double sigma, Py_ssize_t i,
                        double[:, ::1] gram, double[::1] rhs) nogil:
    cdef Py_ssize_t p = z.shape[1], d = w.shape[1], j, k, l
    for k in range(d):
        rhs[k] = 0.0
        for l in range(d):
            gram[k, l] = sigma if k == l else 0.0
    for j in range(p):
        if mask[i, j]:
            for k in range(d):
                rhs[k] += w[j, k] * z[i, j]
                for l in range(k + 1):
                    gram[k, l] += w[j, k] * w[j, l]
    for k in range(d):
        for l in range(k + 1, d):
            gram[k, l] = gram[l, k]
    return _cholesky(gram, d)


def lowrank_posterior_mean(const double[:, ::1] z, const unsigned char[:, ::1] mask,
                           const double[:, ::1] w, double sigma):
    cdef Py_ssize_t n = z.shape[0], d = w.shape[1], i, k
    out = np.zeros((n, d))
    cdef double[:, ::1] m = out
    cdef double[:, ::1] gram = np.empty((d, d))
    cdef double[::1] rhs = np.empty(d)
    for i in range(n):
        if _row_posterior(z, mask, w, sigma, i, gram, rhs) != 0:
            raise np.linalg.LinAlgError("posterior precision not positive definite")
        _chol_solve(gram, rhs, d)
        for k in range(d):
            m[i, k] = rhs[k]
    return out


def lowrank_em_step(const double[:, ::1] z, const unsigned char[:, ::1] mask,
                    const double[:, ::1] w, double sigma):
    cdef Py_ssize_t n = z.shape[0], p = z.shape[1], d = w.shape[1]
    cdef Py_ssize_t i, j, k, l
    cdef double[:, ::1] gram = np.empty((d, d))
    cdef double[::1] rhs = np.empty(d)
    cdef double[::1] mvec = np.empty(d)
    cdef double[::1] unit = np.empty(d)
    cdef double[:, ::1] ss = np.empty((d, d))
    cdef double[:, :, ::1] acc_a = np.zeros((p, d, d))
    cdef double[:, ::1] acc_b = np.zeros((p, d))
    cdef double[::1] nobs_col = np.zeros(p)
    cdef double loglik = 0.0, zz, quad, logdet, total = 0.0, resid = 0.0, nobs
    cdef double log2pi = log(2.0 * M_PI), log_sigma = log(sigma)

    for i in range(n):
        if _row_posterior(z, mask, w, sigma, i, gram, rhs) != 0:
            raise np.linalg.LinAlgError("posterior precision not positive definite")
        for k in range(d):
            mvec[k] = rhs[k]
        _chol_solve(gram, mvec, d)
        logdet = 0.0
        for k in range(d):
            logdet += 2.0 * log(gram[k, k])
        # sigma * gram^{-1} column by column
        for l in range(d):
            for k in range(d):
                unit[k] = 1.0 if k == l else 0.0
            _chol_solve(gram, unit, d)
            for k in range(d):
                ss[k, l] = sigma * unit[k] + mvec[k] * mvec[l]
        zz = 0.0
        nobs = 0.0
        for j in range(p):
            if mask[i, j]:
                zz += z[i, j] * z[i, j]
                nobs += 1.0
                nobs_col[j] += 1.0
                for k in range(d):
                    acc_b[j, k] += z[i, j] * mvec[k]
                    for l in range(d):
                        acc_a[j, k, l] += ss[k, l]
        quad = zz
        for k in range(d):
            quad -= rhs[k] * mvec[k]
        quad /= sigma
        loglik += -0.5 * ((nobs - d) * log_sigma + logdet + quad + nobs * log2pi)
        total += nobs
        resid += zz

    w_new_arr = np.array(w, copy=True)
    cdef double[:, ::1] w_new = w_new_arr
    for j in range(p):
        if nobs_col[j] == 0.0:
            continue
        for k in range(d):
            for l in range(d):
                gram[k, l] = acc_a[j, k, l] + (RIDGE if k == l else 0.0)
            mvec[k] = acc_b[j, k]
        if _cholesky(gram, d) != 0:
            raise np.linalg.LinAlgError("M-step system not positive definite")
        _chol_solve(gram, mvec, d)
        for k in range(d):
            w_new[j, k] = mvec[k]
            resid -= mvec[k] * acc_b[j, k]
    sigma_new = resid / total if total > 0.0 else sigma
    return w_new_arr, sigma_new, loglik
