"""Losses and the per-step training loop driven by degraded priors.

Each optimizer step draws one pair and one accuracy level, degrades the
pair's stored prior toward the ground truth, and updates the shared
encoder plus the interaction weights of the step model that owns the
drawn level's group. Groups rotate deterministically over (epoch, pair)
so every step model sees data each epoch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from . import diffcore as dc
from .cloud import anchor_split, build_hierarchy, overlap_matrix
from .config import RunConfig
from .data import PairRecord, load_ply
from .degradation import DegradationSchedule, PriorSample, draw_tau, group_index, make_prior_sample
from .diffcore import Tensor
from .errors import ConfigError, TrainingDivergence
from .features import local_descriptor
from .geometry import RigidTransform, apply_transform, inverse
from .refine import RefinementPipeline, new_pipeline
from .attention import run_stack
from .features import encode_tensors


@dataclass(frozen=True)
class TrainConfig:
    schedule: DegradationSchedule
    epochs: int
    batch: int
    lr: float
    momentum: float
    margin_pos: float
    margin_neg: float
    gamma: float
    match_temperature: float
    clip_norm: float
    seed: int

    @staticmethod
    def from_run_config(config: RunConfig) -> "TrainConfig":
        if config.seed is None:
            raise ConfigError("training requires an explicit seed")
        t = config.raw["training"]
        s = config.raw["schedule"]
        return TrainConfig(
            schedule=DegradationSchedule(T=s["T"], K=s["K"]),
            epochs=int(t["epochs"]),
            batch=int(t["batch"]),
            lr=float(t["lr"]),
            momentum=float(t["momentum"]),
            margin_pos=float(t["margin_pos"]),
            margin_neg=float(t["margin_neg"]),
            gamma=float(t["gamma"]),
            match_temperature=float(t["match_temperature"]),
            clip_norm=float(t["clip_norm"]),
            seed=int(config.seed),
        )


@dataclass
class PairData:
    """One training pair with its geometry-only caches and gt labels."""

    pair_id: str
    hp: object
    hq: object
    gt: RigidTransform
    prior: RigidTransform
    desc_p: object
    desc_q: object
    overlaps: np.ndarray  # (S_p, S_q) patch overlap fractions under gt
    fine_partner: np.ndarray  # F_p -> index in Q fine (or -1)


@dataclass(frozen=True)
class TrainingSample:
    pair_id: str
    prior_sample: PriorSample
    gt: RigidTransform
    overlaps: np.ndarray
    fine_partner: np.ndarray


def mutual_fine_pairs(hp, hq, gt: RigidTransform, radius: float) -> np.ndarray:
    """Mutual nearest-neighbor fine pairs under gt within radius, as (N, 2)."""
    moved = apply_transform(gt, hp.fine.points)
    nn_pq, sq_pq = _kernels.nearest_neighbor(moved, hq.fine.points)
    nn_qp, _ = _kernels.nearest_neighbor(hq.fine.points, moved)
    p_idx = np.arange(len(hp.fine))
    mutual = (nn_qp[nn_pq] == p_idx) & (sq_pq <= radius * radius)
    return np.stack([p_idx[mutual], nn_pq[mutual]], axis=1)


def prepare_pair(record: PairRecord, config: RunConfig, pair_id: str | None = None) -> PairData:
    source = load_ply(record.source)
    target = load_ply(record.target)
    hp = build_hierarchy(source, config.fine_voxel, config.super_voxel)
    hq = build_hierarchy(target, config.fine_voxel, config.super_voxel)
    neighbors = config.raw["features"]["neighbors"]
    prior = record.prior
    if prior is None:
        warnings.warn(f"pair {record.source!r} has no prior, using identity", stacklevel=2)
        prior = RigidTransform.identity()
    radius = config.overlap_radius
    pairs = mutual_fine_pairs(hp, hq, record.gt, radius)
    partner = np.full(len(hp.fine), -1, dtype=np.int64)
    partner[pairs[:, 0]] = pairs[:, 1]
    return PairData(
        pair_id=pair_id or record.source,
        hp=hp,
        hq=hq,
        gt=record.gt,
        prior=prior,
        desc_p=local_descriptor(hp, neighbors=neighbors),
        desc_q=local_descriptor(hq, neighbors=neighbors),
        overlaps=overlap_matrix(hp, hq, record.gt, radius),
        fine_partner=partner,
    )


def load_dataset(records, config: RunConfig) -> list:
    return [prepare_pair(rec, config, pair_id=f"pair{idx}") for idx, rec in enumerate(records)]


def make_training_sample(
    pair: PairData, schedule: DegradationSchedule, seed: int, group: int | None = None
) -> TrainingSample:
    """Draw an accuracy level (optionally within a group) and degrade the prior."""
    rng = np.random.default_rng(seed)
    if group is None:
        tau = int(rng.integers(1, schedule.T + 1))
    else:
        tau = draw_tau(rng, group, schedule)
    return TrainingSample(
        pair_id=pair.pair_id,
        prior_sample=make_prior_sample(pair.prior, pair.gt, tau, schedule),
        gt=pair.gt,
        overlaps=pair.overlaps,
        fine_partner=pair.fine_partner,
    )


def _circle_side(d: Tensor, overlaps: np.ndarray, margin_pos, margin_neg, gamma):
    pos = overlaps > 0
    neg = ~pos
    rows = pos.any(axis=1)
    if not rows.any():
        return None
    pos_term = dc.rowsum(dc.mul_const(dc.exp(dc.mul_const(dc.add_const(d, -margin_pos), gamma * overlaps)), pos))
    neg_term = dc.rowsum(dc.mul_const(dc.exp(dc.mul_const(dc.add_const(dc.scale(d, -1.0), margin_neg), gamma)), neg))
    per_row = dc.log1p(dc.mul(pos_term, neg_term))
    return dc.scale(dc.sum_all(dc.mul_const(per_row, rows)), 1.0 / float(rows.sum()))


def overlap_circle_loss(
    super_feats_p: Tensor,
    super_feats_q: Tensor,
    gt_patch_overlaps: np.ndarray,
    margin_pos: float = 0.1,
    margin_neg: float = 1.4,
    gamma: float = 24.0,
) -> Tensor:
    """Circle loss over superpoint feature distances, positives weighted by
    their gt patch overlap fraction. Returns 0 when no positive pair exists."""
    fp = dc.l2_normalize_rows(super_feats_p)
    fq = dc.l2_normalize_rows(super_feats_q)
    d_pq = dc.sqrt_clamped(dc.add_const(dc.scale(dc.matmul(fp, fq, transpose_b=True), -2.0), 2.0))
    d_qp = dc.sqrt_clamped(dc.add_const(dc.scale(dc.matmul(fq, fp, transpose_b=True), -2.0), 2.0))
    side_p = _circle_side(d_pq, gt_patch_overlaps, margin_pos, margin_neg, gamma)
    side_q = _circle_side(d_qp, gt_patch_overlaps.T, margin_pos, margin_neg, gamma)
    sides = [s for s in (side_p, side_q) if s is not None]
    if not sides:
        warnings.warn("no positive patch pair in batch, circle loss is 0", stacklevel=2)
        return Tensor(0.0)
    total = sides[0] if len(sides) == 1 else dc.add(sides[0], sides[1])
    return dc.scale(total, 1.0 / len(sides))


def point_matching_loss(patch_logits, targets) -> Tensor:
    """Mean NLL of the labeled column per row over per-patch-pair logits.

    Each logits Tensor is (n_i, m_i + 1) with the last column the unmatched
    slack bin; targets holds the column index per row.
    """
    total_rows = sum(int(t.shape[0]) for t in targets)
    if total_rows == 0:
        return Tensor(0.0)
    acc = None
    for logits, target in zip(patch_logits, targets):
        ls = dc.log_softmax_rows(logits)
        onehot = np.zeros(logits.data.shape)
        onehot[np.arange(target.shape[0]), target] = 1.0
        contrib = dc.sum_all(dc.mul_const(ls, -onehot))
        acc = contrib if acc is None else dc.add(acc, contrib)
    return dc.scale(acc, 1.0 / total_rows)


_MAX_LOSS_PATCH_PAIRS = 128


def _point_loss_inputs(pair_like, fine_p: Tensor, fine_q: Tensor, temperature: float):
    """Logits/targets per gt-overlapping patch pair, capped deterministically."""
    overlaps = pair_like.overlaps
    hp, hq = pair_like.hp, pair_like.hq
    ii, jj = np.nonzero(overlaps > 0)
    if ii.shape[0] > _MAX_LOSS_PATCH_PAIRS:
        order = np.lexsort((jj, ii, -overlaps[ii, jj]))[:_MAX_LOSS_PATCH_PAIRS]
        ii, jj = ii[order], jj[order]
    lookup_q = np.full(len(hq.fine), -1, dtype=np.int64)
    logits_list, target_list = [], []
    for i, j in zip(ii, jj):
        rows = hp.patches[i]
        cols = hq.patches[j]
        lookup_q[cols] = np.arange(cols.shape[0])
        partner = pair_like.fine_partner[rows]
        local = np.where(partner >= 0, lookup_q[np.maximum(partner, 0)], -1)
        target = np.where(local >= 0, local, cols.shape[0])
        lookup_q[cols] = -1
        sim = dc.scale(
            dc.matmul(dc.take_rows(fine_p, rows), dc.take_rows(fine_q, cols), transpose_b=True),
            1.0 / temperature,
        )
        logits_list.append(dc.concat_cols([sim, Tensor(np.zeros((rows.shape[0], 1)))]))
        target_list.append(target.astype(np.int64))
    return logits_list, target_list


@dataclass
class _Optimizer:
    lr: float
    momentum: float
    clip_norm: float = 0.0
    velocity: dict = field(default_factory=dict)

    def update(self, tensors):
        scale = 1.0
        if self.clip_norm > 0:
            total = sum(float((t.grad * t.grad).sum()) for t in tensors if t.grad is not None)
            norm = np.sqrt(total)
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        for t in tensors:
            if t.grad is None:
                continue
            v = self.velocity.get(id(t))
            if v is None:
                v = np.zeros_like(t.data)
                self.velocity[id(t)] = v
            v *= self.momentum
            v -= self.lr * scale * t.grad
            t.data = t.data + v


def _forward_losses(pipeline: RefinementPipeline, pair: PairData, sample: TrainingSample, tc: TrainConfig):
    partition = anchor_split(
        pair.hp,
        pair.hq,
        sample.prior_sample.transform,
        pipeline.config.overlap_radius,
        threshold=pipeline.config.raw["overlap"]["anchor_threshold"],
    )
    sup_p, fine_p = encode_tensors(pair.desc_p, pipeline.encoder)
    sup_q, fine_q = encode_tensors(pair.desc_q, pipeline.encoder)
    fp, fq = run_stack(
        sup_p, sup_q, partition, sample.prior_sample.group, pipeline.weights, pipeline.interaction
    )
    loss_oc = overlap_circle_loss(
        fp, fq, sample.overlaps, tc.margin_pos, tc.margin_neg, tc.gamma
    )
    logits, targets = _point_loss_inputs(pair, fine_p, fine_q, tc.match_temperature)
    loss_p = point_matching_loss(logits, targets)
    return loss_oc, loss_p


def train(dataset, config: RunConfig):
    """Train the shared encoder plus K step-conditioned interaction stacks.

    Returns (pipeline, history), history being one dict per optimizer step.
    """
    tc = TrainConfig.from_run_config(config)
    if not dataset:
        raise ConfigError("training dataset is empty")
    rng = np.random.default_rng(tc.seed)
    pipeline = new_pipeline(config, rng)
    k_models = tc.schedule.K
    opt = _Optimizer(lr=tc.lr, momentum=tc.momentum, clip_norm=tc.clip_norm)
    history = []
    pending = 0
    pending_steps = set()
    for epoch in range(tc.epochs):
        for i, pair in enumerate(dataset):
            group = 1 + (epoch + i) % k_models
            tau = draw_tau(rng, group, tc.schedule)
            sample = TrainingSample(
                pair_id=pair.pair_id,
                prior_sample=make_prior_sample(pair.prior, pair.gt, tau, tc.schedule),
                gt=pair.gt,
                overlaps=pair.overlaps,
                fine_partner=pair.fine_partner,
            )
            try:
                loss_oc, loss_p = _forward_losses(pipeline, pair, sample, tc)
                loss = dc.add(loss_oc, loss_p)
                loss.backward()
            except FloatingPointError as err:
                raise TrainingDivergence(
                    f"non-finite loss at epoch {epoch} pair {pair.pair_id}: {err}"
                ) from None
            history.append(
                {
                    "epoch": epoch,
                    "pair": pair.pair_id,
                    "group": group,
                    "tau": tau,
                    "loss_oc": float(loss_oc.data),
                    "loss_p": float(loss_p.data),
                    "loss": float(loss.data),
                }
            )
            pending += 1
            pending_steps.add(group)
            if pending >= tc.batch:
                tensors = pipeline.encoder.tensors()
                for g in sorted(pending_steps):
                    tensors += pipeline.weights.steps[g - 1].tensors()
                opt.update(tensors)
                for t in tensors:
                    t.zero_grad()
                pending = 0
                pending_steps.clear()
    return pipeline, history
