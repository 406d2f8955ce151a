"""Pure-numpy neighbor kernels (brute force, chunked).

Reference backend: the compiled grid backend must return identical values,
including nearest-neighbor tie-breaks (lowest reference index) and bitwise
identical squared distances (dx*dx + dy*dy + dz*dz accumulation order).
"""

import numpy as np

# cap on query_chunk * len(ref) distance entries held at once
_CHUNK_BUDGET = 4_000_000


def _chunks(n, m):
    step = max(1, _CHUNK_BUDGET // max(m, 1))
    for lo in range(0, n, step):
        yield lo, min(lo + step, n)


def _sqdist(q, ref):
    d = q[:, None, :] - ref[None, :, :]
    return (d * d).sum(axis=-1)


def nearest_neighbor(query, ref):
    """Index and squared distance of the nearest ref point per query point."""
    n = query.shape[0]
    idx = np.empty(n, dtype=np.int64)
    sq = np.empty(n, dtype=np.float64)
    for lo, hi in _chunks(n, ref.shape[0]):
        d2 = _sqdist(query[lo:hi], ref)
        best = np.argmin(d2, axis=1)
        idx[lo:hi] = best
        sq[lo:hi] = d2[np.arange(hi - lo), best]
    return idx, sq


def knn(query, ref, k):
    """Indices of the k nearest ref points per query point, ordered by
    (squared distance, index). Requires k <= len(ref)."""
    n = query.shape[0]
    out = np.empty((n, k), dtype=np.int64)
    for lo, hi in _chunks(n, ref.shape[0]):
        d2 = _sqdist(query[lo:hi], ref)
        part = np.argpartition(d2, k - 1, axis=1)[:, :k]
        rows = np.arange(hi - lo)[:, None]
        dist_part = d2[rows, part]
        order = np.lexsort((part, dist_part), axis=1)
        out[lo:hi] = part[rows, order]
    return out


def has_neighbor(query, ref, radius):
    """True per query point iff some ref point lies within radius (inclusive)."""
    n = query.shape[0]
    out = np.zeros(n, dtype=bool)
    if ref.shape[0] == 0:
        return out
    r2 = radius * radius
    for lo, hi in _chunks(n, ref.shape[0]):
        out[lo:hi] = (_sqdist(query[lo:hi], ref) <= r2).any(axis=1)
    return out


def label_hits(query, ref, labels, n_labels, radius):
    """Boolean (n_query, n_labels): query i has a ref point of label j within radius."""
    n = query.shape[0]
    out = np.zeros((n, n_labels), dtype=bool)
    if ref.shape[0] == 0:
        return out
    order = np.argsort(labels, kind="stable")
    ref_sorted = ref[order]
    labels_sorted = labels[order]
    present, starts = np.unique(labels_sorted, return_index=True)
    r2 = radius * radius
    for lo, hi in _chunks(n, ref.shape[0]):
        hit = (_sqdist(query[lo:hi], ref_sorted) <= r2).astype(np.uint8)
        grouped = np.maximum.reduceat(hit, starts, axis=1)
        out[lo:hi, present] = grouped > 0
    return out
