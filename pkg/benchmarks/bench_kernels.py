"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from isvae import _pykernels, kernels

try:
    from isvae import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    pts = np.ascontiguousarray(rng.normal(size=(2000, 2)))
    blobs = np.ascontiguousarray(np.concatenate([rng.normal(c, 0.3, (250, 2)) for c in range(4)]))
    labels = np.ascontiguousarray(rng.integers(0, 8, 2000).astype(np.intp))
    return {
        "pairwise_sqdist 2000x2000": lambda m: m.pairwise_sqdist(pts, pts),
        "lloyd N=2000 k=8": lambda m: m.lloyd(pts, np.ascontiguousarray(pts[:8].copy()), 300),
        "dbscan N=1000": lambda m: m.dbscan(blobs, 0.2, 5),
        "cluster_distance_sums N=2000": lambda m: m.cluster_distance_sums(pts, labels, 8),
    }


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    print(f"active backend: {kernels.BACKEND}")
    if _ckernels is None:
        print("compiled extension unavailable; only the fallback is timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:32s} {t_py:10.2f} {'-':>10s} {'-':>8s}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {t_py:10.2f} {t_c:10.2f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
