"""Supervised (homogeneity, completeness, V-measure) and unsupervised
(silhouette, Calinski-Harabasz) clustering scores.

DBSCAN noise (label -1) is scored as one more cluster.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from isvae import kernels
from isvae.spectral import ValidationError


def _labels(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 1 or a.size == 0:
        raise ValidationError(f"{name} must be a nonempty vector")
    return a


def _entropy(counts: np.ndarray) -> float:
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def contingency(true_labels, pred_labels) -> np.ndarray:
    _, ti = np.unique(true_labels, return_inverse=True)
    _, pi = np.unique(pred_labels, return_inverse=True)
    table = np.zeros((ti.max() + 1, pi.max() + 1), dtype=np.int64)
    np.add.at(table, (ti, pi), 1)
    return table


def homogeneity_completeness_v(true_labels, pred_labels) -> tuple[float, float, float]:
    t = _labels(true_labels, "true_labels")
    p = _labels(pred_labels, "pred_labels")
    if t.shape != p.shape:
        raise ValidationError(f"length mismatch: {t.size} vs {p.size}")
    table = contingency(t, p).astype(np.float64)
    n = table.sum()
    h_c = _entropy(table.sum(axis=1))
    h_k = _entropy(table.sum(axis=0))
    nz = table > 0
    joint = table[nz] / n
    # H(C|K) = -sum p(c,k) log(p(c,k)/p(k)) and symmetrically for H(K|C)
    pk = np.broadcast_to(table.sum(axis=0, keepdims=True), table.shape)[nz] / n
    pc = np.broadcast_to(table.sum(axis=1, keepdims=True), table.shape)[nz] / n
    h_c_given_k = float(-np.sum(joint * np.log(joint / pk)))
    h_k_given_c = float(-np.sum(joint * np.log(joint / pc)))
    h = 1.0 if h_c == 0 else 1.0 - h_c_given_k / h_c
    c = 1.0 if h_k == 0 else 1.0 - h_k_given_c / h_k
    v = 0.0 if h + c == 0 else 2.0 * h * c / (h + c)
    return h, c, v


def v_measure(true_labels, pred_labels) -> float:
    return homogeneity_completeness_v(true_labels, pred_labels)[2]


def _unsupervised_inputs(features, labels):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    lab = _labels(labels, "labels")
    if x.shape[0] != lab.shape[0]:
        raise ValidationError(f"length mismatch: {x.shape[0]} rows vs {lab.size} labels")
    uniq, inv = np.unique(lab, return_inverse=True)
    return x, inv.astype(np.intp), len(uniq)


def silhouette_samples(features, labels) -> np.ndarray:
    x, inv, k = _unsupervised_inputs(features, labels)
    if k < 2:
        raise ValidationError("silhouette needs at least two clusters")
    sizes = np.bincount(inv, minlength=k).astype(np.float64)
    sums = kernels.cluster_distance_sums(x, inv, k)
    rows = np.arange(x.shape[0])
    own = sizes[inv]
    a = np.where(own > 1, sums[rows, inv] / np.maximum(own - 1, 1), 0.0)
    others = sums / sizes[None, :]
    others[rows, inv] = np.inf
    b = others.min(axis=1)
    denom = np.maximum(a, b)
    s = np.where(denom > 0, (b - a) / np.where(denom > 0, denom, 1.0), 0.0)
    return np.where(own > 1, s, 0.0)


def silhouette(features, labels) -> float:
    """Mean silhouette coefficient; members of singleton clusters contribute 0."""
    return float(np.mean(silhouette_samples(features, labels)))


def calinski_harabasz(features, labels) -> float:
    x, inv, k = _unsupervised_inputs(features, labels)
    n = x.shape[0]
    if not 2 <= k < n:
        raise ValidationError(f"Calinski-Harabasz needs 2 <= k < N, got k={k}, N={n}")
    overall = x.mean(axis=0)
    bgss = wgss = 0.0
    for c in range(k):
        members = x[inv == c]
        centroid = members.mean(axis=0)
        bgss += members.shape[0] * float(np.sum((centroid - overall) ** 2))
        wgss += float(np.sum((members - centroid) ** 2))
    if wgss == 0:
        raise ValidationError("degenerate clustering: zero within-cluster dispersion")
    return (bgss / (k - 1)) / (wgss / (n - k))


@dataclass
class MetricReport:
    v_score: float
    homogeneity: float
    completeness: float
    silhouette: float
    calinski_harabasz: float

    def to_json(self) -> str:
        return json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()})

    @classmethod
    def from_json(cls, text: str) -> MetricReport:
        d = json.loads(text)
        return cls(**{k: (math.nan if v is None else float(v)) for k, v in d.items()})


def score(features, pred_labels, true_labels=None) -> MetricReport:
    """All five metrics; undefined ones (no ground truth, one cluster, zero spread) are NaN."""
    h = c = v = math.nan
    if true_labels is not None:
        h, c, v = homogeneity_completeness_v(true_labels, pred_labels)
    try:
        sil = silhouette(features, pred_labels)
    except ValidationError:
        sil = math.nan
    try:
        ch = calinski_harabasz(features, pred_labels)
    except ValidationError:
        ch = math.nan
    return MetricReport(v, h, c, sil, ch)
