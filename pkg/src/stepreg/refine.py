"""Multi-step refinement: run step models f_1..f_K, each step consuming the
previous estimate as its prior.

A step computes features, splits superpoints into anchors/non-anchors
under the incoming prior (skipped when there is none), runs the
step-conditioned interaction stack, matches coarse-to-fine, and feeds the
fine correspondences to the configured robust estimator. On estimator
failure mid-pipeline the trajectory is truncated and the last successful
estimate is kept as the final answer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import InteractionConfig, StepWeights, init_step_weights, run_stack
from .cloud import HierarchicalCloud, anchor_split, build_hierarchy
from .config import RunConfig
from .diffcore import ParameterSet, Tensor, read_tensor_file, write_tensor_file
from .errors import EstimationError
from .estimation import EstimatorReport, lgr, ransac
from .features import FeatureMap, encode_tensors, init_encoder, local_descriptor
from .geometry import RigidTransform
from .matching import CorrespondenceSet, coarse_match, fine_match


@dataclass
class RefinementPipeline:
    encoder: ParameterSet
    weights: StepWeights
    config: RunConfig

    @property
    def num_steps(self) -> int:
        return len(self.weights)

    @property
    def interaction(self) -> InteractionConfig:
        r = self.config.raw
        return InteractionConfig(
            L=r["attention"]["layers"],
            heads=r["attention"]["heads"],
            D=r["features"]["d_super"],
            K=self.num_steps,
        )


@dataclass(frozen=True)
class StepResult:
    transform: RigidTransform
    report: EstimatorReport
    anchors_p: int
    anchors_q: int

    def to_json(self):
        return {
            "q": [float(v) for v in self.transform.q],
            "t": [float(v) for v in self.transform.t],
            "inliers": self.report.inlier_count,
            "anchors_p": self.anchors_p,
            "anchors_q": self.anchors_q,
        }


@dataclass(frozen=True)
class StepFailure:
    step: int
    message: str


@dataclass
class Trajectory:
    transforms: list  # K+1 entries, [0] is the injected prior (may be None)
    steps: list = field(default_factory=list)
    failure: StepFailure | None = None

    @property
    def final(self) -> RigidTransform:
        for x in reversed(self.transforms):
            if x is not None:
                return x
        return RigidTransform.identity()

    def to_json(self):
        return {
            "prior": None if self.transforms[0] is None else self.transforms[0].to_json(),
            "steps": [s.to_json() for s in self.steps],
            "failure": None
            if self.failure is None
            else {"step": self.failure.step, "message": self.failure.message},
            "final": self.final.to_json(),
        }


def new_pipeline(config: RunConfig, rng: np.random.Generator) -> RefinementPipeline:
    r = config.raw
    interaction = InteractionConfig(
        L=r["attention"]["layers"],
        heads=r["attention"]["heads"],
        D=r["features"]["d_super"],
        K=r["schedule"]["K"],
    )
    encoder = init_encoder(rng, d_super=r["features"]["d_super"], d_fine=r["features"]["d_fine"])
    return RefinementPipeline(encoder=encoder, weights=init_step_weights(interaction, rng), config=config)


def build_pair_hierarchies(pipeline_or_config, source_cloud, target_cloud):
    config = getattr(pipeline_or_config, "config", pipeline_or_config)
    hp = build_hierarchy(source_cloud, config.fine_voxel, config.super_voxel)
    hq = build_hierarchy(target_cloud, config.fine_voxel, config.super_voxel)
    return hp, hq


def compute_features(pipeline: RefinementPipeline, hier: HierarchicalCloud):
    desc = local_descriptor(hier, neighbors=pipeline.config.raw["features"]["neighbors"])
    return encode_tensors(desc, pipeline.encoder)


def _estimate(pipeline: RefinementPipeline, corr: CorrespondenceSet, hp, hq) -> EstimatorReport:
    est = pipeline.config.raw["estimator"]
    if est["kind"] == "ransac":
        if corr.n_fine < 3:
            raise EstimationError("estimation failed")
        return ransac(
            hp.fine.points[corr.fine_p],
            hq.fine.points[corr.fine_q],
            weights=corr.confidence,
            iters=est["ransac_iters"],
            inlier_radius=pipeline.config.inlier_radius,
            seed=0 if pipeline.config.seed is None else int(pipeline.config.seed),
            weighted_sampling=est["weighted_sampling"],
        )
    return lgr(
        corr,
        hp,
        hq,
        inlier_radius=pipeline.config.inlier_radius,
        refine_iters=est["refine_iters"],
    )


def refine_step(
    pipeline: RefinementPipeline,
    step_k: int,
    hp: HierarchicalCloud,
    hq: HierarchicalCloud,
    prior: RigidTransform | None,
    features=None,
    corr_sink=None,
):
    """One refinement step; returns (StepResult, CorrespondenceSet)."""
    if not 1 <= step_k <= pipeline.num_steps:
        raise ValueError(f"step index {step_k} out of range [1, {pipeline.num_steps}]")
    if features is None:
        feats_p = compute_features(pipeline, hp)
        feats_q = compute_features(pipeline, hq)
    else:
        feats_p, feats_q = features
    partition = None
    if prior is not None:
        partition = anchor_split(
            hp,
            hq,
            prior,
            pipeline.config.overlap_radius,
            threshold=pipeline.config.raw["overlap"]["anchor_threshold"],
        )
    fp, fq = run_stack(
        feats_p[0], feats_q[0], partition, step_k, pipeline.weights, pipeline.interaction
    )
    coarse = coarse_match(fp.data, fq.data, top_k=pipeline.config.raw["matching"]["top_k"])
    if coarse.n_coarse == 0:
        raise EstimationError("estimation failed", step=step_k)
    fmap_p = FeatureMap(super_features=fp.data, fine_features=feats_p[1].data)
    fmap_q = FeatureMap(super_features=fq.data, fine_features=feats_q[1].data)
    corr = fine_match(
        coarse, hp, hq, fmap_p, fmap_q, conf_thresh=pipeline.config.raw["matching"]["conf_thresh"]
    )
    if corr_sink is not None:
        corr_sink.append(corr)
    try:
        report = _estimate(pipeline, corr, hp, hq)
    except EstimationError as err:
        raise EstimationError(str(err), step=step_k) from None
    result = StepResult(
        transform=report.transform,
        report=report,
        anchors_p=0 if partition is None else int(partition.anchors_p.shape[0]),
        anchors_q=0 if partition is None else int(partition.anchors_q.shape[0]),
    )
    return result, corr


def run_pipeline(
    pipeline: RefinementPipeline,
    hp: HierarchicalCloud,
    hq: HierarchicalCloud,
    x0: RigidTransform | None = None,
    max_steps: int | None = None,
    corr_sink=None,
) -> Trajectory:
    """Full multi-step run; the k-th step's prior is the (k-1)-th estimate."""
    steps = pipeline.num_steps if max_steps is None else min(max_steps, pipeline.num_steps)
    feats_p = compute_features(pipeline, hp)
    feats_q = compute_features(pipeline, hq)
    traj = Trajectory(transforms=[x0])
    for k in range(1, steps + 1):
        prior = traj.transforms[k - 1]
        try:
            result, _ = refine_step(
                pipeline, k, hp, hq, prior, features=(feats_p, feats_q), corr_sink=corr_sink
            )
        except EstimationError as err:
            traj.failure = StepFailure(step=k, message=str(err))
            break
        traj.steps.append(result)
        traj.transforms.append(result.transform)
    return traj


def save_pipeline(pipeline: RefinementPipeline, path):
    items = {}
    for name, t in pipeline.encoder.items():
        items[f"encoder.{name}"] = t.data
    for k, ps in enumerate(pipeline.weights.steps, start=1):
        for name, t in ps.items():
            items[f"step{k}.{name}"] = t.data
    write_tensor_file(path, items)


def load_pipeline(path, config: RunConfig) -> RefinementPipeline:
    arrays = read_tensor_file(path)
    pipeline = new_pipeline(config, np.random.default_rng(0))
    pipeline.encoder.load_arrays(
        {name[len("encoder."):]: a for name, a in arrays.items() if name.startswith("encoder.")}
    )
    for k, ps in enumerate(pipeline.weights.steps, start=1):
        prefix = f"step{k}."
        ps.load_arrays({name[len(prefix):]: a for name, a in arrays.items() if name.startswith(prefix)})
    return pipeline
