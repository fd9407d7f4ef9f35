"""Hot kernels with a compiled backend and a NumPy fallback.

The Cython module ``_ckernels`` is used when it was built at install time.
Set ``CLOSUREREC_PURE_PYTHON=1`` to force the fallback; ``BACKEND`` names
the active one.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

try:
    if os.environ.get("CLOSUREREC_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _ckernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _pykernels
    BACKEND = "python"


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _mask(m) -> np.ndarray:
    return np.ascontiguousarray(m, dtype=bool).view(np.uint8)


def backend_module(name: str | None = None):
    """Return the kernel module for ``name`` ('cython' or 'python'), or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def euclidean_pairwise(a, b, impl=None):
    return (impl or _impl).euclidean_pairwise(_f64(a), _f64(b))


def cosine_pairwise(a, b, impl=None):
    return (impl or _impl).cosine_pairwise(_f64(a), _f64(b))


def gower_pairwise(cont_a, cat_a, cont_b, cat_b, ranges, impl=None):
    return (impl or _impl).gower_pairwise(
        _f64(cont_a),
        np.ascontiguousarray(cat_a, dtype=np.int64),
        _f64(cont_b),
        np.ascontiguousarray(cat_b, dtype=np.int64),
        _f64(ranges),
    )


def stagger_max_run(values, amp_frac: float, impl=None) -> int:
    return int((impl or _impl).stagger_max_run(_f64(values), float(amp_frac)))


def lowrank_posterior_mean(z, mask, w, sigma: float, impl=None) -> np.ndarray:
    impl = impl or _impl
    zf = _f64(np.where(mask, z, 0.0))
    m = _mask(mask) if impl is not _pykernels else np.asarray(mask, dtype=bool)
    return impl.lowrank_posterior_mean(zf, m, _f64(w), float(sigma))


def lowrank_em_step(z, mask, w, sigma: float, impl=None):
    impl = impl or _impl
    zf = _f64(np.where(mask, z, 0.0))
    m = _mask(mask) if impl is not _pykernels else np.asarray(mask, dtype=bool)
    w_new, s_new, ll = impl.lowrank_em_step(zf, m, _f64(w), float(sigma))
    return np.asarray(w_new), float(s_new), float(ll)
