"""Neighbor-query kernels with a compiled core and a pure-numpy fallback.

The compiled grid backend is selected at import when available; set
STEPREG_BACKEND=numpy to force the fallback. Both backends return
identical values (see fallback module notes).
"""

import os

import numpy as np

from . import fallback as _fallback

_impl = _fallback
BACKEND = "numpy"

if os.environ.get("STEPREG_BACKEND", "").lower() not in ("numpy", "fallback"):
    try:
        from . import grid as _grid

        _impl = _grid
        BACKEND = "compiled"
    except ImportError:
        pass


def _as_points(a, name):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"{name} must be an (N, 3) array, got shape {a.shape}")
    return a


def nearest_neighbor(query, ref):
    """Per query point: (index, squared distance) of nearest ref point.

    Ties break to the lowest reference index.
    """
    query = _as_points(query, "query")
    ref = _as_points(ref, "ref")
    if ref.shape[0] == 0:
        raise ValueError("reference cloud is empty")
    return _impl.nearest_neighbor(query, ref)


def knn(query, ref, k):
    """Indices of the k nearest ref points per query point.

    Rows are ordered by (squared distance, index); k must not exceed the
    reference size. Boundary ties at the k-th distance are resolved by
    index in the compiled backend and are backend-defined in the fallback.
    """
    query = _as_points(query, "query")
    ref = _as_points(ref, "ref")
    if not 1 <= k <= ref.shape[0]:
        raise ValueError(f"k must be in [1, {ref.shape[0]}], got {k}")
    return _impl.knn(query, ref, int(k))


def has_neighbor(query, ref, radius):
    """Per query point: whether some ref point lies within radius (inclusive)."""
    query = _as_points(query, "query")
    ref = _as_points(ref, "ref")
    if radius <= 0:
        raise ValueError("radius must be positive")
    return _impl.has_neighbor(query, ref, float(radius))


def label_hits(query, ref, labels, n_labels, radius):
    """Boolean (n_query, n_labels) matrix of within-radius hits per ref label."""
    query = _as_points(query, "query")
    ref = _as_points(ref, "ref")
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    if labels.shape != (ref.shape[0],):
        raise ValueError("labels must have one entry per ref point")
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n_labels <= 0:
        raise ValueError("n_labels must be positive")
    return _impl.label_hits(query, ref, labels, int(n_labels), float(radius))
