"""K-means, DBSCAN and normalized spectral clustering on feature matrices."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from isvae import kernels
from isvae.spectral import ValidationError

FEATURE_SPACES = ("f0", "f0_extended", "latent_z", "raw_time", "raw_dct")


def _features(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError(f"features must be an (N>=2, d) matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("features contain non-finite values")
    return x


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = kernels.pairwise_sqdist(x, x[chosen[-1] : chosen[-1] + 1])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:  # remaining points all coincide with a chosen centre
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(free))
        chosen.append(idx)
        d2 = np.minimum(d2, kernels.pairwise_sqdist(x, x[idx : idx + 1])[:, 0])
    return x[chosen].copy()


def kmeans(features, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; keeps the lowest-inertia restart.

    Ties between restarts go to the earliest one, so results depend only on ``seed``.
    """
    x = _features(features)
    if not 1 <= k <= x.shape[0]:
        raise ValidationError(f"k={k} must lie in [1, N={x.shape[0]}]")
    rng = np.random.default_rng(seed)
    best: KMeansResult | None = None
    for _ in range(max(1, n_init)):
        centers = kmeans_plusplus(x, k, rng)
        labels, history = kernels.lloyd(x, centers, max_iter)
        if best is None or history[-1] < best.inertia:
            best = KMeansResult(labels, centers, history[-1], history)
    return best


def dbscan(features, eps: float = 0.5, min_pts: int = 5) -> np.ndarray:
    """Density-based clustering with Euclidean distance; noise points get label -1.

    A point is core when at least ``min_pts`` points (itself included) lie within
    ``eps``. Clusters are the connected components of core points; each border
    point joins the cluster of its nearest core neighbour, which makes the
    partition independent of row order.
    """
    x = _features(features)
    if eps <= 0 or min_pts < 1:
        raise ValidationError("eps must be positive and min_pts at least 1")
    return kernels.dbscan(x, eps, min_pts)


def spectral_cluster(features, k: int, seed: int = 0, gamma: float | None = None, n_init: int = 10) -> np.ndarray:
    """Ng-Jordan-Weiss spectral clustering with an RBF affinity.

    ``gamma`` defaults to ``1 / n_features``.
    """
    x = _features(features)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValidationError(f"k={k} must lie in [1, N={n}]")
    if k == 1:
        return np.zeros(n, dtype=np.intp)
    gamma = 1.0 / x.shape[1] if gamma is None else gamma
    affinity = np.exp(-gamma * kernels.pairwise_sqdist(x, x))
    np.fill_diagonal(affinity, 0.0)
    inv_sqrt_deg = 1.0 / np.sqrt(affinity.sum(axis=1) + 1e-12)
    norm_aff = affinity * inv_sqrt_deg[:, None] * inv_sqrt_deg[None, :]
    # smallest eigenvalues of I - norm_aff are the largest of norm_aff
    _, vecs = np.linalg.eigh(norm_aff)
    embed = vecs[:, -k:]
    embed = embed / np.maximum(np.linalg.norm(embed, axis=1, keepdims=True), 1e-12)
    return kmeans(embed, k, seed=seed, n_init=n_init).labels


def run_clusterer(method: str, features, k: int | None = None, seed: int = 0, **params) -> np.ndarray:
    if method == "kmeans":
        return kmeans(features, k, seed=seed, **params).labels
    if method == "dbscan":
        return dbscan(features, **params)
    if method == "spectral":
        return spectral_cluster(features, k, seed=seed, **params)
    raise ValidationError(f"unknown clusterer {method!r}")


def write_assignment(path, labels) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "label"])
        for i, lab in enumerate(np.asarray(labels)):
            w.writerow([i, int(lab)])


def read_assignment(path) -> np.ndarray:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    rows.sort(key=lambda r: int(r["index"]))
    return np.array([int(r["label"]) for r in rows], dtype=np.int64)
