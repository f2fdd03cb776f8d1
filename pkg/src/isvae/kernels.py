"""Backend selection for the numeric inner loops.

The compiled Cython module is used when it imports; otherwise (or when the
environment variable ``ISVAE_PURE_PYTHON`` is set to a non-empty value other
than ``0``) the NumPy fallback is used. ``BACKEND`` names the active one.
"""

from __future__ import annotations

import os

import numpy as np

from isvae import _pykernels

_force_python = os.environ.get("ISVAE_PURE_PYTHON", "") not in ("", "0")

if _force_python:
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from isvae import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"


def _c64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def dct2_rows(x):
    # a cosine-table matrix product through BLAS beats any scalar compiled loop
    return _pykernels.dct2_rows(_c64(x))


def pairwise_sqdist(a, b):
    return _impl.pairwise_sqdist(_c64(a), _c64(b))


def lloyd(x, centers, max_iter: int):
    """Lloyd iterations; mutates ``centers``. Returns (labels, inertia_history)."""
    labels, history = _impl.lloyd(_c64(x), centers, int(max_iter))
    return np.asarray(labels, dtype=np.intp), [float(h) for h in history]


def dbscan(x, eps: float, min_pts: int):
    return np.asarray(_impl.dbscan(_c64(x), float(eps), int(min_pts)), dtype=np.intp)


def cluster_distance_sums(x, labels, n_clusters: int):
    labels = np.ascontiguousarray(labels, dtype=np.intp)
    return _impl.cluster_distance_sums(_c64(x), labels, int(n_clusters))
