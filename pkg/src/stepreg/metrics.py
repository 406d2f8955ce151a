"""Benchmark metrics: RMSE-based recall, inlier ratio, FMR, and pose recall."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import RigidTransform, apply_transform

DEFAULT_RMSE_THRESH = 0.2  # meters
DEFAULT_IR_THRESH = 0.05
DEFAULT_RRE_THRESH = math.radians(5.0)
DEFAULT_RTE_THRESH = 2.0  # meters


@dataclass(frozen=True)
class PairEvaluation:
    rmse: float
    rre: float  # radians
    rte: float  # meters
    inlier_ratio: float
    correspondence_count: int
    overlap: float | None = None
    per_step_rmse: list = field(default_factory=list)

    def flags(
        self,
        rmse_thresh=DEFAULT_RMSE_THRESH,
        ir_thresh=DEFAULT_IR_THRESH,
        rre_thresh=DEFAULT_RRE_THRESH,
        rte_thresh=DEFAULT_RTE_THRESH,
    ):
        return {
            "rr": self.rmse < rmse_thresh,
            "fmr": self.inlier_ratio > ir_thresh,
            "pose": self.rre < rre_thresh and self.rte < rte_thresh,
        }


def inlier_ratio(p_points, q_points, gt: RigidTransform, radius: float) -> float:
    """Fraction of correspondences with ||gt(p) - q|| <= radius; empty -> 0."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    p = np.asarray(p_points, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(q_points, dtype=np.float64).reshape(-1, 3)
    if p.shape[0] == 0:
        return 0.0
    d = apply_transform(gt, p) - q
    return float((np.sqrt((d * d).sum(axis=1)) <= radius).mean())


def _require(evals):
    evals = list(evals)
    if not evals:
        raise ValueError("empty evaluation list")
    return evals


def registration_recall(evals, rmse_thresh: float = DEFAULT_RMSE_THRESH) -> float:
    evals = _require(evals)
    return sum(e.rmse < rmse_thresh for e in evals) / len(evals)


def fmr(evals, ir_thresh: float = DEFAULT_IR_THRESH) -> float:
    evals = _require(evals)
    return sum(e.inlier_ratio > ir_thresh for e in evals) / len(evals)


def pose_recall(
    evals, rre_thresh: float = DEFAULT_RRE_THRESH, rte_thresh: float = DEFAULT_RTE_THRESH
) -> float:
    evals = _require(evals)
    return sum(e.rre < rre_thresh and e.rte < rte_thresh for e in evals) / len(evals)


def mean_inlier_ratio(evals) -> float:
    evals = _require(evals)
    return sum(e.inlier_ratio for e in evals) / len(evals)


def recall_by_overlap(evals, bin_edges, rmse_thresh: float = DEFAULT_RMSE_THRESH):
    """Registration recall per overlap bin; bins without pairs are omitted.

    Edges [e0 .. en] produce bins (<e0), [e0, e1), ..., [en, inf).
    """
    edges = list(bin_edges)
    if sorted(edges) != edges:
        raise ValueError("bin edges must be sorted ascending")
    bins = [[] for _ in range(len(edges) + 1)]
    for e in evals:
        if e.overlap is None:
            continue
        bins[int(np.searchsorted(edges, e.overlap, side="right"))].append(e)
    out = []
    for b, members in enumerate(bins):
        if not members:
            continue
        if b == 0:
            label = f"<{edges[0]:g}"
        elif b == len(edges):
            label = f">={edges[-1]:g}"
        else:
            label = f"{edges[b - 1]:g}-{edges[b]:g}"
        out.append(
            {"bin": label, "recall": registration_recall(members, rmse_thresh), "count": len(members)}
        )
    return out
