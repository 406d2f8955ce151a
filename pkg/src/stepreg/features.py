"""Geometric descriptors and the learned projection into feature space.

The backbone stand-in: a handcrafted local descriptor per point at both
hierarchy levels, followed by a small trainable two-layer projection.
Descriptor channels (15): covariance eigenvalue shares (3, sorted
descending), log inverse neighbor spacing, height above the neighborhood
centroid, an 8-bin radial distance histogram, normal verticality |n_z|,
and height above the cloud's floor level. The first twelve channels are
invariant to arbitrary rotations; the gravity-aligned ones (heights,
verticality) are invariant to rotations about the z axis, which matching
relies on: planar patches of different orientation or elevation would
otherwise be indistinguishable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import diffcore as dc
from .cloud import HierarchicalCloud
from .diffcore import ParameterSet, Tensor

DESCRIPTOR_DIM = 15
_HIST_BINS = 8
_SPACING_EPS = 1e-3
_FLOOR_QUANTILE = 0.05


@dataclass(frozen=True)
class Descriptors:
    super: np.ndarray  # (S, DESCRIPTOR_DIM)
    fine: np.ndarray  # (F, DESCRIPTOR_DIM)


@dataclass(frozen=True)
class FeatureMap:
    super_features: np.ndarray  # (S, D)
    fine_features: np.ndarray  # (F, D_f), rows L2-normalized


def _neighborhood_channels(center: np.ndarray, hood: np.ndarray, floor_z: float) -> np.ndarray:
    """Descriptor of one point given its neighborhood (center included)."""
    out = np.zeros(DESCRIPTOR_DIM)
    centroid = hood.mean(axis=0)
    centered = hood - centroid
    cov = centered.T @ centered / hood.shape[0]
    eigval, eigvec = np.linalg.eigh(cov)
    eig = np.maximum(eigval[::-1], 0.0)
    total = eig.sum()
    if total > 0:
        out[0:3] = eig / total
    dists = np.linalg.norm(hood - center, axis=1)
    others = dists[dists > 0]
    mean_spacing = others.mean() if others.size else 0.0
    out[3] = -np.log(mean_spacing + _SPACING_EPS)
    out[4] = center[2] - centroid[2]
    r_max = dists.max()
    if r_max > 0:
        bins = np.minimum((dists / r_max * _HIST_BINS).astype(np.int64), _HIST_BINS - 1)
    else:
        bins = np.zeros(dists.shape[0], dtype=np.int64)
    np.add.at(out, 5 + bins, 1.0 / dists.shape[0])
    out[13] = abs(eigvec[2, 0])  # smallest-eigenvalue direction = local normal
    out[14] = center[2] - floor_z
    return out


def _knn_indices(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest points (self included) per point.

    Clouds smaller than k pad with the point's own index.
    """
    n = points.shape[0]
    kk = min(k, n)
    out = np.empty((n, k), dtype=np.int64)
    out[:, :kk] = _kernels.knn(points, points, kk)
    if kk < k:
        out[:, kk:] = np.arange(n)[:, None]
    return out


def _channels_batch(centers: np.ndarray, hoods: np.ndarray, floor_z: float) -> np.ndarray:
    """Vectorized _neighborhood_channels over (N, k, 3) fixed-size neighborhoods."""
    n, k, _ = hoods.shape
    out = np.zeros((n, DESCRIPTOR_DIM))
    centroid = hoods.mean(axis=1)
    centered = hoods - centroid[:, None, :]
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    eigval, eigvec = np.linalg.eigh(cov)
    eig = np.maximum(eigval[:, ::-1], 0.0)
    total = eig.sum(axis=1)
    live = total > 0
    out[live, 0:3] = eig[live] / total[live, None]
    d = hoods - centers[:, None, :]
    dists = np.sqrt((d * d).sum(axis=-1))
    nonself = dists > 0
    counts = np.maximum(nonself.sum(axis=1), 1)
    mean_spacing = (dists * nonself).sum(axis=1) / counts
    out[:, 3] = -np.log(mean_spacing + _SPACING_EPS)
    out[:, 4] = centers[:, 2] - centroid[:, 2]
    r_max = dists.max(axis=1)
    safe = np.where(r_max > 0, r_max, 1.0)
    bins = np.minimum((dists / safe[:, None] * _HIST_BINS).astype(np.int64), _HIST_BINS - 1)
    rows = np.repeat(np.arange(n), k)
    np.add.at(out, (rows, 5 + bins.reshape(-1)), 1.0 / k)
    out[:, 13] = np.abs(eigvec[:, 2, 0])
    out[:, 14] = centers[:, 2] - floor_z
    return out


def local_descriptor(hier: HierarchicalCloud, neighbors: int = 16) -> Descriptors:
    """Per-point descriptors: fine points over k-NN, superpoints over patches."""
    if neighbors < 4:
        raise ValueError("neighbors must be >= 4")
    fine_pts = hier.fine.points
    floor_z = float(np.quantile(fine_pts[:, 2], _FLOOR_QUANTILE))
    knn = _knn_indices(fine_pts, neighbors)
    fine_desc = _channels_batch(fine_pts, fine_pts[knn], floor_z)
    sup_pts = hier.super.points
    sup_desc = np.empty((sup_pts.shape[0], DESCRIPTOR_DIM))
    for i in range(sup_pts.shape[0]):
        sup_desc[i] = _neighborhood_channels(sup_pts[i], fine_pts[hier.patches[i]], floor_z)
    return Descriptors(super=sup_desc, fine=fine_desc)


def init_encoder(rng: np.random.Generator, d_super: int = 64, d_fine: int = 32) -> ParameterSet:
    ps = ParameterSet()
    for level, width in (("super", d_super), ("fine", d_fine)):
        ps.add(f"{level}.w1", rng.normal(0.0, np.sqrt(2.0 / DESCRIPTOR_DIM), (DESCRIPTOR_DIM, width)))
        ps.add(f"{level}.b1", np.zeros(width))
        ps.add(f"{level}.w2", rng.normal(0.0, np.sqrt(2.0 / width), (width, width)))
        ps.add(f"{level}.b2", np.zeros(width))
    return ps


def encode_tensors(desc: Descriptors, params: ParameterSet):
    """Differentiable projection: (super Tensor [S, D], fine Tensor [F, D_f])."""
    sup = dc.mlp2(
        Tensor(desc.super), params["super.w1"], params["super.b1"], params["super.w2"], params["super.b2"]
    )
    fine = dc.mlp2(
        Tensor(desc.fine), params["fine.w1"], params["fine.b1"], params["fine.w2"], params["fine.b2"]
    )
    return sup, dc.l2_normalize_rows(fine)


def encode(desc: Descriptors, params: ParameterSet) -> FeatureMap:
    sup, fine = encode_tensors(desc, params)
    return FeatureMap(super_features=sup.data, fine_features=fine.data)
