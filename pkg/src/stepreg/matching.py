"""Coarse superpoint matching and fine in-patch point matching.

Coarse: cosine similarity between L2-normalized superpoint features,
dual-normalized (row softmax times column softmax), global top-k with
lexicographic tie-breaks. Fine: mutual-top-1 cosine matches inside each
matched patch pair, thresholded on raw similarity; confidences map the
cosine onto [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cloud import HierarchicalCloud
from .features import FeatureMap


@dataclass(frozen=True)
class CorrespondenceSet:
    coarse_p: np.ndarray  # superpoint indices in P
    coarse_q: np.ndarray
    coarse_score: np.ndarray  # in [0, 1]
    fine_p: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    fine_q: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    confidence: np.ndarray = field(default_factory=lambda: np.empty(0))
    fine_to_coarse: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def n_coarse(self):
        return self.coarse_p.shape[0]

    @property
    def n_fine(self):
        return self.fine_p.shape[0]


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.maximum(n, 1e-12)


def _softmax(x: np.ndarray, axis: int) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def dual_normalized_similarity(fp: np.ndarray, fq: np.ndarray) -> np.ndarray:
    sim = _normalize_rows(fp) @ _normalize_rows(fq).T
    return _softmax(sim, axis=1) * _softmax(sim, axis=0)


def coarse_match(fp: np.ndarray, fq: np.ndarray, top_k: int = 32) -> CorrespondenceSet:
    """Global top-k entries of the dual-normalized similarity map."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if fp.shape[0] == 0 or fq.shape[0] == 0:
        empty = np.empty(0, dtype=np.int64)
        return CorrespondenceSet(coarse_p=empty, coarse_q=empty, coarse_score=np.empty(0))
    score = dual_normalized_similarity(fp, fq)
    flat = score.reshape(-1)
    ii, jj = np.divmod(np.arange(flat.shape[0]), score.shape[1])
    order = np.lexsort((jj, ii, -flat))[: min(top_k, flat.shape[0])]
    chosen = flat[order]
    return CorrespondenceSet(
        coarse_p=ii[order].astype(np.int64),
        coarse_q=jj[order].astype(np.int64),
        coarse_score=chosen / chosen.max(),
    )


def fine_match(
    coarse: CorrespondenceSet,
    hier_p: HierarchicalCloud,
    hier_q: HierarchicalCloud,
    fmap_p: FeatureMap,
    fmap_q: FeatureMap,
    conf_thresh: float = 0.05,
) -> CorrespondenceSet:
    """Mutual-top-1 fine matches inside each coarse patch pair.

    An empty fine list is a legal outcome (the caller decides failure).
    """
    if coarse.n_coarse == 0:
        raise ValueError("coarse correspondence list is empty")
    out_p, out_q, out_conf, out_src = [], [], [], []
    best = {}  # (fine_i, fine_j) -> position in output lists
    for c in range(coarse.n_coarse):
        pi = hier_p.patches[coarse.coarse_p[c]]
        qj = hier_q.patches[coarse.coarse_q[c]]
        sim = fmap_p.fine_features[pi] @ fmap_q.fine_features[qj].T
        row_best = sim.argmax(axis=1)
        col_best = sim.argmax(axis=0)
        rows = np.flatnonzero(col_best[row_best] == np.arange(pi.shape[0]))
        for r in rows:
            s = sim[r, row_best[r]]
            if s < conf_thresh:
                continue
            key = (int(pi[r]), int(qj[row_best[r]]))
            conf = 0.5 * (s + 1.0)
            if key in best:
                at = best[key]
                if conf > out_conf[at]:
                    out_conf[at] = conf
                    out_src[at] = c
                continue
            best[key] = len(out_p)
            out_p.append(key[0])
            out_q.append(key[1])
            out_conf.append(conf)
            out_src.append(c)
    return CorrespondenceSet(
        coarse_p=coarse.coarse_p,
        coarse_q=coarse.coarse_q,
        coarse_score=coarse.coarse_score,
        fine_p=np.asarray(out_p, dtype=np.int64),
        fine_q=np.asarray(out_q, dtype=np.int64),
        confidence=np.asarray(out_conf),
        fine_to_coarse=np.asarray(out_src, dtype=np.int64),
    )
