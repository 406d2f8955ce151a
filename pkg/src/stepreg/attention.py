"""Feature-interaction stack: interleaved vanilla and one-way attention.

Each block runs, in order: self-attention per cloud, cross-attention
between the clouds, then (only when a prior-derived anchor partition is
present and both anchor sets are non-empty) one-way attention that
updates non-anchor rows from anchor keys/values, first within each cloud
and then from the counterpart cloud. Anchor rows are only touched by the
vanilla paths. Blocks are step-conditioned: every step index owns one
parameter set of identical shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .cloud import AnchorPartition
from .diffcore import ParameterSet, Tensor


@dataclass(frozen=True)
class InteractionConfig:
    L: int = 3
    heads: int = 4
    D: int = 64
    K: int = 5

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.D % self.heads != 0:
            raise ValueError("width D must be divisible by heads")
        if self.K < 1:
            raise ValueError("K must be >= 1")


@dataclass
class StepWeights:
    """One interaction-stack parameter set per refinement step."""

    steps: list

    def __post_init__(self):
        if not self.steps:
            raise ValueError("need at least one step parameter set")
        ref = {name: t.data.shape for name, t in self.steps[0].items()}
        for ps in self.steps[1:]:
            shapes = {name: t.data.shape for name, t in ps.items()}
            if shapes != ref:
                raise ValueError("step parameter sets must have identical shapes")

    def __len__(self):
        return len(self.steps)


def _init_mha(ps: ParameterSet, prefix: str, d: int, rng: np.random.Generator):
    std = 1.0 / np.sqrt(d)
    for name in ("wq", "wk", "wv"):
        ps.add(f"{prefix}.{name}", rng.normal(0.0, std, (d, d)))
    # damped output projection: blocks start near the identity residual
    ps.add(f"{prefix}.wo", rng.normal(0.0, 0.1 * std, (d, d)))
    for name in ("bq", "bk", "bv", "bo"):
        ps.add(f"{prefix}.{name}", np.zeros(d))


def _init_oa(ps: ParameterSet, prefix: str, d: int, rng: np.random.Generator):
    std = 1.0 / np.sqrt(d)
    for name in ("wq", "wk", "wv"):
        ps.add(f"{prefix}.{name}", rng.normal(0.0, std, (d, d)))
    for name in ("bq", "bk", "bv"):
        ps.add(f"{prefix}.{name}", np.zeros(d))
    ps.add(f"{prefix}.mlp.w1", rng.normal(0.0, np.sqrt(2.0 / d), (d, d)))
    ps.add(f"{prefix}.mlp.b1", np.zeros(d))
    # zero output layer: one-way paths start as exact residual identities
    ps.add(f"{prefix}.mlp.w2", np.zeros((d, d)))
    ps.add(f"{prefix}.mlp.b2", np.zeros(d))


def init_step_params(config: InteractionConfig, rng: np.random.Generator) -> ParameterSet:
    ps = ParameterSet()
    for layer in range(config.L):
        p = f"block{layer}"
        _init_mha(ps, f"{p}.self", config.D, rng)
        ps.add(f"{p}.ln1.gain", np.ones(config.D))
        ps.add(f"{p}.ln1.bias", np.zeros(config.D))
        _init_mha(ps, f"{p}.cross", config.D, rng)
        ps.add(f"{p}.ln2.gain", np.ones(config.D))
        ps.add(f"{p}.ln2.bias", np.zeros(config.D))
        _init_oa(ps, f"{p}.oa_self", config.D, rng)
        _init_oa(ps, f"{p}.oa_cross", config.D, rng)
    return ps


def init_step_weights(config: InteractionConfig, rng: np.random.Generator) -> StepWeights:
    return StepWeights([init_step_params(config, rng) for _ in range(config.K)])


def _sub(params, prefix: str) -> dict:
    if isinstance(params, ParameterSet):
        return params.subset(prefix)
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def one_way_attention(f_anchor: Tensor, f_non: Tensor, params) -> Tensor:
    """Update non-anchor rows from anchor keys/values.

    out = f_non + MLP(f_non + w @ V_anchor), w = softmax(Q_non K_anchor^T / sqrt(D)).
    Each output row depends only on its own input row and the anchor set.
    """
    if f_anchor.data.shape[0] < 1:
        raise ValueError("one_way_attention requires at least one anchor")
    if f_non.data.shape[0] == 0:
        return f_non
    d = f_non.data.shape[1]
    q = dc.linear(f_non, params["wq"], params["bq"])
    k = dc.linear(f_anchor, params["wk"], params["bk"])
    v = dc.linear(f_anchor, params["wv"], params["bv"])
    w = dc.softmax_rows(dc.scale(dc.matmul(q, k, transpose_b=True), 1.0 / np.sqrt(d)))
    mixed = dc.add(f_non, dc.matmul(w, v))
    mlp = _sub(params, "mlp")
    return dc.add(f_non, dc.mlp2(mixed, mlp["w1"], mlp["b1"], mlp["w2"], mlp["b2"]))


def _oa_update(feats: Tensor, anchor_feats: Tensor, non_idx: np.ndarray, params) -> Tensor:
    """Replace non-anchor rows of feats with their one-way-attention update."""
    if non_idx.shape[0] == 0:
        return feats
    updated = one_way_attention(anchor_feats, dc.take_rows(feats, non_idx), params)
    return dc.place_rows(feats, non_idx, updated)


def interaction_block(
    fp: Tensor, fq: Tensor, partition, params, has_prior: bool, heads: int = 4
):
    """One interaction block over both clouds; see module docstring for order."""
    ln1 = _sub(params, "ln1")
    ln2 = _sub(params, "ln2")
    p_self = _sub(params, "self")
    p_cross = _sub(params, "cross")

    fp = dc.layer_norm(dc.add(fp, dc.multi_head_attention(fp, fp, fp, p_self, heads)), ln1["gain"], ln1["bias"])
    fq = dc.layer_norm(dc.add(fq, dc.multi_head_attention(fq, fq, fq, p_self, heads)), ln1["gain"], ln1["bias"])
    fp2 = dc.layer_norm(dc.add(fp, dc.multi_head_attention(fp, fq, fq, p_cross, heads)), ln2["gain"], ln2["bias"])
    fq2 = dc.layer_norm(dc.add(fq, dc.multi_head_attention(fq, fp, fp, p_cross, heads)), ln2["gain"], ln2["bias"])

    gate = (
        has_prior
        and partition is not None
        and partition.anchors_p.shape[0] > 0
        and partition.anchors_q.shape[0] > 0
    )
    if not gate:
        return fp2, fq2

    oa_self = _sub(params, "oa_self")
    oa_cross = _sub(params, "oa_cross")
    anchors_p = dc.take_rows(fp2, partition.anchors_p)
    anchors_q = dc.take_rows(fq2, partition.anchors_q)
    fp3 = _oa_update(fp2, anchors_p, partition.nonanchors_p, oa_self)
    fp3 = _oa_update(fp3, anchors_q, partition.nonanchors_p, oa_cross)
    fq3 = _oa_update(fq2, anchors_q, partition.nonanchors_q, oa_self)
    fq3 = _oa_update(fq3, anchors_p, partition.nonanchors_q, oa_cross)
    return fp3, fq3


def run_stack(
    fp: Tensor,
    fq: Tensor,
    partition: AnchorPartition,
    step_k: int,
    weights: StepWeights,
    config: InteractionConfig,
):
    """Apply L interaction blocks with the step_k parameter set."""
    if not 1 <= step_k <= len(weights):
        raise ValueError(f"step index {step_k} out of range [1, {len(weights)}]")
    params = weights.steps[step_k - 1]
    has_prior = partition is not None
    for layer in range(config.L):
        block = _sub(params, f"block{layer}")
        fp, fq = interaction_block(fp, fq, partition, block, has_prior, heads=config.heads)
    return fp, fq
