# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror ``isvae._pykernels``; the DCT has no
compiled version because the NumPy table product already runs on BLAS."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, INFINITY

cnp.import_array()


def pairwise_sqdist(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t na = a.shape[0], nb = b.shape[0], dim = a.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double acc, t
    out = np.empty((na, nb), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(na):
        for j in range(nb):
            acc = 0.0
            for k in range(dim):
                t = a[i, k] - b[j, k]
                acc += t * t
            o[i, j] = acc
    return out


cdef inline double _sqdist(const double[:, ::1] a, Py_ssize_t i,
                           const double[:, ::1] b, Py_ssize_t j) nogil:
    cdef Py_ssize_t k
    cdef double acc = 0.0, t
    for k in range(a.shape[1]):
        t = a[i, k] - b[j, k]
        acc += t * t
    return acc


def lloyd(const double[:, ::1] x, double[:, ::1] centers, int max_iter):
    """Run Lloyd iterations in place on ``centers``.

    Returns (labels, inertia_history). The history holds the inertia right
    after each assignment step; iteration stops once labels are stable.
    """
    cdef Py_ssize_t n = x.shape[0], dim = x.shape[1], k = centers.shape[0]
    cdef Py_ssize_t i, c, best, it, f
    cdef double dist, best_d, inertia
    cdef bint changed
    labels_arr = np.full(n, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] labels = labels_arr
    counts_arr = np.zeros(k, dtype=np.intp)
    cdef Py_ssize_t[::1] counts = counts_arr
    sums_arr = np.zeros((k, dim), dtype=np.float64)
    cdef double[:, ::1] sums = sums_arr
    history = []
    for it in range(max_iter):
        changed = False
        inertia = 0.0
        for i in range(n):
            best = 0
            best_d = INFINITY
            for c in range(k):
                dist = _sqdist(x, i, centers, c)
                if dist < best_d:
                    best_d = dist
                    best = c
            if labels[i] != best:
                labels[i] = best
                changed = True
            inertia += best_d
        history.append(inertia)
        if not changed and it > 0:
            break
        counts[:] = 0
        sums[:, :] = 0.0
        for i in range(n):
            counts[labels[i]] += 1
            for f in range(dim):
                sums[labels[i], f] += x[i, f]
        for c in range(k):
            if counts[c] > 0:  # empty clusters keep their previous center
                for f in range(dim):
                    centers[c, f] = sums[c, f] / counts[c]
    return labels_arr, history


def dbscan(const double[:, ::1] x, double eps, int min_pts):
    """Density clustering; border points join their nearest core point's cluster."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, j, head, tail, p, q, nearest
    cdef double eps2 = eps * eps, dist, best_d
    cdef int cluster = 0
    counts_arr = np.zeros(n, dtype=np.intp)
    cdef Py_ssize_t[::1] counts = counts_arr
    for i in range(n):
        for j in range(i, n):
            if _sqdist(x, i, x, j) <= eps2:
                counts[i] += 1
                if j != i:
                    counts[j] += 1
    labels_arr = np.full(n, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] labels = labels_arr
    queue_arr = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] queue = queue_arr
    # connected components over core points
    for i in range(n):
        if counts[i] < min_pts or labels[i] != -1:
            continue
        labels[i] = cluster
        head = 0
        tail = 0
        queue[tail] = i
        tail += 1
        while head < tail:
            p = queue[head]
            head += 1
            for q in range(n):
                if labels[q] == -1 and counts[q] >= min_pts and _sqdist(x, p, x, q) <= eps2:
                    labels[q] = cluster
                    queue[tail] = q
                    tail += 1
        cluster += 1
    # border points
    for i in range(n):
        if counts[i] >= min_pts:
            continue
        nearest = -1
        best_d = INFINITY
        for j in range(n):
            if counts[j] >= min_pts:
                dist = _sqdist(x, i, x, j)
                if dist <= eps2 and dist < best_d:
                    best_d = dist
                    nearest = j
        if nearest >= 0:
            labels[i] = labels[nearest]
    return labels_arr


def cluster_distance_sums(const double[:, ::1] x, const Py_ssize_t[::1] labels, Py_ssize_t n_clusters):
    """sums[i, c] = sum of Euclidean distances from sample i to members of cluster c."""
    cdef Py_ssize_t n = x.shape[0], i, j
    cdef double dist
    out = np.zeros((n, n_clusters), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(i + 1, n):
            dist = sqrt(_sqdist(x, i, x, j))
            o[i, labels[j]] += dist
            o[j, labels[i]] += dist
    return out
