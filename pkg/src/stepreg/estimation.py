"""Rigid-transform recovery: weighted Procrustes, RANSAC, and local-to-global.

All estimators are deterministic: RANSAC takes an explicit seed, the
local-to-global estimator samples nothing. Inlier tests are inclusive
(residual <= radius).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import HierarchicalCloud
from .errors import EstimationError
from .geometry import RigidTransform, apply_transform, matrix_to_quat
from .matching import CorrespondenceSet

_RANK_RTOL = 1e-9


@dataclass(frozen=True)
class EstimatorReport:
    transform: RigidTransform
    inlier_count: int
    inlier_radius: float
    iterations: int

    def to_json(self):
        return {
            "transform": self.transform.to_json(),
            "inliers": self.inlier_count,
            "inlier_radius": self.inlier_radius,
            "iterations": self.iterations,
        }


def weighted_procrustes(p, q, weights=None) -> RigidTransform:
    """Least-squares rigid transform minimizing sum_i w_i ||R p_i + t - q_i||^2.

    The rotation determinant is forced to +1 by flipping the smallest
    singular direction, so mirror pairings return a proper rotation with
    non-zero residual.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    if p.shape[0] < 3:
        raise EstimationError("degenerate correspondences")
    if weights is None:
        w = np.full(p.shape[0], 1.0 / p.shape[0])
    else:
        w = np.asarray(weights, dtype=np.float64)
        total = w.sum()
        if total <= 0:
            raise EstimationError("degenerate correspondences")
        w = w / total
    mu_p = w @ p
    mu_q = w @ q
    h = (p - mu_p).T @ ((q - mu_q) * w[:, None])
    u, s, vt = np.linalg.svd(h)
    if s[0] <= 0 or s[1] <= _RANK_RTOL * s[0]:
        raise EstimationError("degenerate correspondences")
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    r = v @ np.diag([1.0, 1.0, d]) @ u.T
    t = mu_q - r @ mu_p
    return RigidTransform(matrix_to_quat(r), t)


def _residuals(x: RigidTransform, p, q) -> np.ndarray:
    d = apply_transform(x, p) - q
    return np.sqrt((d * d).sum(axis=1))


def ransac(
    p,
    q,
    weights=None,
    iters: int = 1000,
    inlier_radius: float = 0.05,
    seed: int = 0,
    weighted_sampling: bool = True,
) -> EstimatorReport:
    """Best-of-iters three-point hypotheses, then one refit on the inliers.

    Hypothesis sampling is confidence-weighted by default; ties in inlier
    count break toward lower inlier residual.
    """
    p = np.asarray(p, dtype=np.float64).reshape(-1, 3)
    q = np.asarray(q, dtype=np.float64).reshape(-1, 3)
    n = p.shape[0]
    if n < 3:
        raise EstimationError("estimation failed")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    rng = np.random.default_rng(seed)
    probs = None
    if weighted_sampling and w.sum() > 0:
        probs = w / w.sum()
    best = None  # (count, -ssr, transform, mask)
    for _ in range(iters):
        idx = rng.choice(n, size=3, replace=False, p=probs)
        try:
            hyp = weighted_procrustes(p[idx], q[idx], w[idx])
        except EstimationError:
            continue
        res = _residuals(hyp, p, q)
        mask = res <= inlier_radius
        count = int(mask.sum())
        ssr = float((res[mask] ** 2).sum())
        key = (count, -ssr)
        if best is None or key > best[0]:
            best = (key, hyp, mask)
    if best is None or best[0][0] < 3:
        raise EstimationError("estimation failed")
    _, hyp, mask = best
    try:
        refined = weighted_procrustes(p[mask], q[mask], w[mask])
    except EstimationError:
        refined = hyp
    final_mask = _residuals(refined, p, q) <= inlier_radius
    return EstimatorReport(
        transform=refined,
        inlier_count=int(final_mask.sum()),
        inlier_radius=inlier_radius,
        iterations=iters,
    )


def lgr(
    corr: CorrespondenceSet,
    hier_p: HierarchicalCloud,
    hier_q: HierarchicalCloud,
    inlier_radius: float = 0.05,
    refine_iters: int = 5,
) -> EstimatorReport:
    """Local-to-global: per-patch hypotheses, global selection, iterative refit.

    The refit loop keeps the previous estimate whenever a refit would lower
    the global inlier count, so the count is non-decreasing across rounds.
    """
    if corr.n_fine == 0:
        raise EstimationError("estimation failed")
    p = hier_p.fine.points[corr.fine_p]
    q = hier_q.fine.points[corr.fine_q]
    w = corr.confidence
    best = None  # (count, -ssr, -patch) ordering
    for c in range(corr.n_coarse):
        sel = corr.fine_to_coarse == c
        if sel.sum() < 3:
            continue
        try:
            hyp = weighted_procrustes(p[sel], q[sel], w[sel])
        except EstimationError:
            continue
        res = _residuals(hyp, p, q)
        mask = res <= inlier_radius
        count = int(mask.sum())
        ssr = float((res[mask] ** 2).sum())
        key = (count, -ssr, -c)
        if best is None or key > best[0]:
            best = (key, hyp, mask)
    if best is None:
        raise EstimationError("estimation failed")
    _, x, mask = best
    count = int(mask.sum())
    rounds = 0
    for _ in range(refine_iters):
        if count < 3:
            break
        try:
            refit = weighted_procrustes(p[mask], q[mask], w[mask])
        except EstimationError:
            break
        new_mask = _residuals(refit, p, q) <= inlier_radius
        new_count = int(new_mask.sum())
        if new_count < count:
            break
        x, mask, count = refit, new_mask, new_count
        rounds += 1
    return EstimatorReport(transform=x, inlier_count=count, inlier_radius=inlier_radius, iterations=rounds)
