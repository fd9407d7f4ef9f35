"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the best-of-N wall time for each backend and
the speed-up. Backends that are not available are reported as such.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from closurerec import _kernels


def _workloads(rng: np.random.Generator) -> dict:
    a, b = rng.uniform(size=(136, 12)), rng.uniform(size=(136, 12))
    ca, cb = rng.integers(0, 4, size=(136, 3)), rng.integers(0, 4, size=(136, 3))
    ranges = np.ones(12)
    profile = rng.normal(size=5000)
    n, p, d = 136, 100, 10
    z = rng.normal(size=(n, p))
    mask = rng.uniform(size=(n, p)) < 0.5
    w = rng.normal(size=(p, d)) * 0.3
    return {
        "euclidean_pairwise 136x136x12": lambda impl: _kernels.euclidean_pairwise(a, b, impl=impl),
        "cosine_pairwise 136x136x12": lambda impl: _kernels.cosine_pairwise(a, b, impl=impl),
        "gower_pairwise 136x136 (12+3)": lambda impl: _kernels.gower_pairwise(a, ca, b, cb, ranges, impl=impl),
        "stagger_max_run n=5000": lambda impl: _kernels.stagger_max_run(profile, 0.01, impl=impl),
        "lowrank_em_step 136x100 d=10": lambda impl: _kernels.lowrank_em_step(z, mask, w, 0.5, impl=impl),
        "lowrank_posterior_mean 136x100": lambda impl: _kernels.lowrank_posterior_mean(z, mask, w, 0.5, impl=impl),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = {"python": _kernels.backend_module("python")}
    try:
        backends["cython"] = _kernels.backend_module("cython")
    except ImportError:
        pass

    print(f"active backend: {_kernels.BACKEND}")
    print(f"{'kernel':34s} {'python':>11s} {'cython':>11s} {'speed-up':>9s}")
    for name, fn in _workloads(np.random.default_rng(args.seed)).items():
        times = {}
        for label, impl in backends.items():
            fn(impl)  # warm-up
            times[label] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
        py = times["python"]
        cy = times.get("cython")
        cy_text = f"{cy * 1e3:9.2f}ms" if cy is not None else "   missing "
        ratio = f"{py / cy:8.1f}x" if cy else "      -"
        print(f"{name:34s} {py * 1e3:9.2f}ms {cy_text} {ratio}")


if __name__ == "__main__":
    main()
