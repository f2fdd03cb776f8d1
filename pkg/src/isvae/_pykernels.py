"""NumPy implementations of the inner loops in ``_ckernels.pyx``.

Used when the compiled extension is unavailable or ``ISVAE_PURE_PYTHON=1``.
Results agree with the compiled versions to floating-point rounding.
"""

from __future__ import annotations

import numpy as np


def dct2_rows(x: np.ndarray) -> np.ndarray:
    D = x.shape[1]
    n = np.arange(D)
    # integer phase index keeps the cosine argument exact before reduction
    phase = np.outer(np.arange(D), 2 * n + 1) % (4 * D)
    table = np.cos(np.pi * phase / (2.0 * D))
    return x @ table.T


def pairwise_sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int):
    n = x.shape[0]
    k = centers.shape[0]
    labels = np.full(n, -1, dtype=np.intp)
    history = []
    for it in range(max_iter):
        d2 = pairwise_sqdist(x, centers)
        new = np.argmin(d2, axis=1)
        changed = bool(np.any(new != labels))
        labels = new
        history.append(float(d2[np.arange(n), labels].sum()))
        if not changed and it > 0:
            break
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
    return labels, history


def dbscan(x: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    n = x.shape[0]
    adj = pairwise_sqdist(x, x) <= eps * eps
    core = adj.sum(axis=1) >= min_pts
    labels = np.full(n, -1, dtype=np.intp)
    cluster = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = cluster
        queue = [i]
        while queue:
            p = queue.pop()
            fresh = np.flatnonzero(adj[p] & core & (labels == -1))
            labels[fresh] = cluster
            queue.extend(fresh.tolist())
        cluster += 1
    d2 = pairwise_sqdist(x, x)
    for i in np.flatnonzero(~core):
        cand = np.flatnonzero(adj[i] & core)
        if cand.size:
            labels[i] = labels[cand[np.argmin(d2[i, cand])]]
    return labels


def cluster_distance_sums(x: np.ndarray, labels: np.ndarray, n_clusters: int) -> np.ndarray:
    dist = np.sqrt(pairwise_sqdist(x, x))
    onehot = np.zeros((x.shape[0], n_clusters))
    onehot[np.arange(x.shape[0]), labels] = 1.0
    return dist @ onehot
