"""Point-cloud containers, voxel downsampling, and the two-level hierarchy.

Fine points come from a first voxel pass, superpoints from a second,
coarser pass over the fine points. Each fine point is assigned to its
nearest superpoint (ties to the lowest superpoint index); the per-
superpoint groups of fine points are the patches used for overlap
reasoning and coarse-to-fine matching.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DegenerateCloudError
from .geometry import RigidTransform, apply_transform, inverse


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __init__(self, points):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class HierarchicalCloud:
    fine: PointCloud
    super: PointCloud
    assignment: np.ndarray  # fine index -> superpoint index
    patches: list = field(repr=False)  # superpoint index -> fine index array


@dataclass(frozen=True)
class AnchorPartition:
    anchors_p: np.ndarray
    nonanchors_p: np.ndarray
    anchors_q: np.ndarray
    nonanchors_q: np.ndarray


def _voxel_keys(points: np.ndarray, voxel_size: float) -> np.ndarray:
    return np.floor(points / voxel_size).astype(np.int64)


def voxel_downsample(cloud: PointCloud, voxel_size: float) -> PointCloud:
    """One centroid per occupied voxel, ordered by ascending (ix, iy, iz) key."""
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    pts = cloud.points
    if pts.shape[0] == 0:
        return PointCloud(np.empty((0, 3)))
    keys = _voxel_keys(pts, voxel_size)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    keys = keys[order]
    pts = pts[order]
    boundary = np.any(np.diff(keys, axis=0) != 0, axis=1)
    starts = np.concatenate([[0], np.flatnonzero(boundary) + 1])
    counts = np.diff(np.concatenate([starts, [pts.shape[0]]]))
    sums = np.add.reduceat(pts, starts, axis=0)
    return PointCloud(sums / counts[:, None])


def build_hierarchy(cloud: PointCloud, fine_voxel: float, super_voxel: float) -> HierarchicalCloud:
    """Fine/super two-level hierarchy with point-to-node patches."""
    if not 0 < fine_voxel < super_voxel:
        raise ValueError("need super_voxel > fine_voxel > 0")
    fine = voxel_downsample(cloud, fine_voxel)
    sup = voxel_downsample(fine, super_voxel)
    if len(sup) == 0:
        raise DegenerateCloudError("degenerate cloud")
    assignment, _ = _kernels.nearest_neighbor(fine.points, sup.points)
    # drop superpoints that attracted no fine point, then reindex
    used = np.unique(assignment)
    if used.shape[0] != len(sup):
        remap = np.full(len(sup), -1, dtype=np.int64)
        remap[used] = np.arange(used.shape[0])
        sup = PointCloud(sup.points[used])
        assignment = remap[assignment]
    patches = [np.flatnonzero(assignment == i) for i in range(len(sup))]
    return HierarchicalCloud(fine=fine, super=sup, assignment=assignment, patches=patches)


def patch_overlap(patch_a, patch_b, x: RigidTransform, radius: float) -> float:
    """Fraction of patch_a points whose x-image has a patch_b point within radius."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    a = np.asarray(patch_a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(patch_b, dtype=np.float64).reshape(-1, 3)
    if a.shape[0] == 0:
        raise ValueError("patch_a must be non-empty")
    if b.shape[0] == 0:
        return 0.0
    hits = _kernels.has_neighbor(apply_transform(x, a), b, radius)
    return float(hits.mean())


def overlap_matrix(
    hp: HierarchicalCloud, hq: HierarchicalCloud, x: RigidTransform, radius: float
) -> np.ndarray:
    """(S_p, S_q) matrix of patch_overlap values for every patch pair under x."""
    hits = _kernels.label_hits(
        apply_transform(x, hp.fine.points), hq.fine.points, hq.assignment, len(hq.super), radius
    )
    counts = np.zeros((len(hp.super), len(hq.super)), dtype=np.float64)
    np.add.at(counts, hp.assignment, hits.astype(np.float64))
    sizes = np.array([len(p) for p in hp.patches], dtype=np.float64)
    return counts / sizes[:, None]


def _anchor_mask(hp, hq, x, radius, threshold):
    if threshold == 0.0:
        # anchor iff any patch point lands within radius of any target point
        hits = _kernels.has_neighbor(apply_transform(x, hp.fine.points), hq.fine.points, radius)
        mask = np.zeros(len(hp.super), dtype=bool)
        np.logical_or.at(mask, hp.assignment, hits)
        return mask
    return overlap_matrix(hp, hq, x, radius).max(axis=1) > threshold


def anchor_split(
    hp: HierarchicalCloud,
    hq: HierarchicalCloud,
    x: RigidTransform,
    radius: float,
    threshold: float = 0.0,
) -> AnchorPartition:
    """Split superpoints of both clouds into anchors and non-anchors under x.

    A superpoint of P is an anchor iff the best patch overlap against Q
    exceeds threshold (default 0, i.e. a single within-radius point
    suffices); Q is handled symmetrically under the inverse transform.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    mask_p = _anchor_mask(hp, hq, x, radius, threshold)
    mask_q = _anchor_mask(hq, hp, inverse(x), radius, threshold)
    return AnchorPartition(
        anchors_p=np.flatnonzero(mask_p),
        nonanchors_p=np.flatnonzero(~mask_p),
        anchors_q=np.flatnonzero(mask_q),
        nonanchors_q=np.flatnonzero(~mask_q),
    )


def gt_overlap_sample(
    hp: HierarchicalCloud, hq: HierarchicalCloud, gt: RigidTransform, radius: float
):
    """Fine points of P inside the true overlap region, plus the overlap ratio.

    A fine point belongs to the sample iff its gt-transformed position has
    a fine neighbor in Q within radius.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if len(hp.fine) == 0:
        return np.empty((0, 3)), 0.0
    hits = _kernels.has_neighbor(apply_transform(gt, hp.fine.points), hq.fine.points, radius)
    sample = hp.fine.points[hits]
    return sample, float(hits.mean())
