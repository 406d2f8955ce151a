"""Command-line entry point: gen, train, register, eval, degrade-inspect.

Exit codes: 0 success, 1 usage, 2 I/O, 3 training divergence,
4 estimation failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import data as data_mod
from . import metrics as metrics_mod
from .cloud import gt_overlap_sample
from .config import RunConfig
from .degradation import DegradationSchedule, degrade, group_index
from .errors import ConfigError, EstimationError, PlyParseError, StepRegError, TrainingDivergence
from .geometry import RigidTransform, alignment_rmse, rotation_error, translation_error
from .refine import build_pair_hierarchies, load_pipeline, run_pipeline, save_pipeline
from .training import load_dataset, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DIVERGENCE = 3
EXIT_ESTIMATION = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_overrides(pairs):
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _load_config(args) -> RunConfig:
    overrides = _parse_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return RunConfig.load(getattr(args, "config", None), overrides)


def _pair_seed(seed: int, index: int) -> int:
    return (seed * 1_000_003 + index) % (2**63)


def cmd_gen(args) -> int:
    config = _load_config(args)
    if config.seed is None:
        raise ConfigError("gen requires --seed")
    gen = config.raw["generation"]
    out_dir = args.out
    os.makedirs(out_dir, exist_ok=True)
    targets = gen["overlap_targets"]
    records = []
    for i in range(int(gen["pairs"])):
        target = float(targets[i % len(targets)])
        spec = data_mod.SceneSpec(
            seed=_pair_seed(config.seed, i),
            room_extent=gen["room_extent"],
            planes=int(gen["planes"]),
            boxes=int(gen["boxes"]),
            cylinders=int(gen["cylinders"]),
            points_per_cloud=int(gen["points"]),
            target_overlap=target,
            noise_sigma=gen["noise_sigma"],
            rot_range=tuple(gen["rot_range"]),
            trans_range=tuple(gen["trans_range"]),
            fine_voxel=config.fine_voxel,
        )
        source, target_cloud, record = data_mod.generate_pair(spec)
        meta_rng = np.random.default_rng([config.seed, i])
        rot_err = meta_rng.uniform(*gen["prior_rot_err"])
        trans_err = meta_rng.uniform(*gen["prior_trans_err"])
        prior = data_mod.synth_prior(record.gt, rot_err, trans_err, int(meta_rng.integers(2**31)))
        src_name = f"pair{i:04d}_source.ply"
        tgt_name = f"pair{i:04d}_target.ply"
        data_mod.save_ply(os.path.join(out_dir, src_name), source)
        data_mod.save_ply(os.path.join(out_dir, tgt_name), target_cloud)
        records.append(
            data_mod.PairRecord(
                source=src_name, target=tgt_name, gt=record.gt, prior=prior, overlap=record.overlap
            )
        )
    manifest = os.path.join(out_dir, "manifest.json")
    data_mod.save_manifest(manifest, records)
    print(manifest)
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    records = data_mod.load_manifest(args.manifest)
    if not records:
        raise ConfigError("manifest holds no pairs")
    dataset = load_dataset(records, config)
    pipeline, history = train(dataset, config)
    save_pipeline(pipeline, args.out)
    with open(args.out + ".json", "w", encoding="utf-8") as fh:
        json.dump(config.to_json(), fh, indent=1)
        fh.write("\n")
    with open(args.out + ".log.jsonl", "w", encoding="utf-8") as fh:
        for entry in history:
            fh.write(json.dumps(entry) + "\n")
    print(args.out)
    return EXIT_OK


def _parse_prior(text):
    if text in (None, "identity"):
        return RigidTransform.identity()
    if text == "none":
        return None
    return RigidTransform.from_json(json.loads(text))


def _load_model(args):
    sidecar = args.model + ".json"
    if not os.path.exists(sidecar):
        raise FileNotFoundError(f"missing model config {sidecar}")
    config = RunConfig.load(sidecar, _parse_overrides(getattr(args, "set", None)))
    return load_pipeline(args.model, config), config


def cmd_register(args) -> int:
    pipeline, config = _load_model(args)
    source = data_mod.load_ply(args.source)
    target = data_mod.load_ply(args.target)
    hp, hq = build_pair_hierarchies(config, source, target)
    corr_sink = [] if args.dump_corr else None
    traj = run_pipeline(
        pipeline, hp, hq, x0=_parse_prior(args.prior), max_steps=args.steps, corr_sink=corr_sink
    )
    if args.dump_corr and corr_sink:
        corr = corr_sink[-1]
        with open(args.dump_corr, "w", encoding="utf-8") as fh:
            for pi, qj, conf in zip(corr.fine_p, corr.fine_q, corr.confidence):
                fh.write(json.dumps({"pi": int(pi), "qj": int(qj), "conf": float(conf)}) + "\n")
    print(json.dumps(traj.to_json(), indent=2))
    return EXIT_ESTIMATION if traj.failure is not None else EXIT_OK


def _evaluate_pair(pipeline, config, record):
    source = data_mod.load_ply(record.source)
    target = data_mod.load_ply(record.target)
    hp, hq = build_pair_hierarchies(config, source, target)
    prior = record.prior if record.prior is not None else RigidTransform.identity()
    corr_sink = []
    traj = run_pipeline(pipeline, hp, hq, x0=prior, corr_sink=corr_sink)
    sample, measured = gt_overlap_sample(hp, hq, record.gt, config.overlap_radius)
    per_step = []
    for result in traj.steps:
        per_step.append(
            alignment_rmse(result.transform, record.gt, sample) if sample.shape[0] else float("inf")
        )
    final = traj.final
    ir_radius = config.raw["metrics"]["ir_radius"]
    if corr_sink:
        corr = corr_sink[-1]
        ir = metrics_mod.inlier_ratio(
            hp.fine.points[corr.fine_p], hq.fine.points[corr.fine_q], record.gt, ir_radius
        )
        n_corr = corr.n_fine
    else:
        ir, n_corr = 0.0, 0
    return metrics_mod.PairEvaluation(
        rmse=alignment_rmse(final, record.gt, sample) if sample.shape[0] else float("inf"),
        rre=rotation_error(final.q, record.gt.q),
        rte=translation_error(final.t, record.gt.t),
        inlier_ratio=ir,
        correspondence_count=n_corr,
        overlap=measured,
        per_step_rmse=per_step,
    )


_WORKER_STATE = {}


def _eval_worker_init(model_path, config_json):
    config = RunConfig(raw=config_json)
    _WORKER_STATE["pipeline"] = load_pipeline(model_path, config)
    _WORKER_STATE["config"] = config


def _eval_worker(record):
    return _evaluate_pair(_WORKER_STATE["pipeline"], _WORKER_STATE["config"], record)


def cmd_eval(args) -> int:
    pipeline, config = _load_model(args)
    records = data_mod.load_manifest(args.manifest)
    if not records:
        print("error: empty manifest", file=sys.stderr)
        return EXIT_IO
    if args.jobs > 1:
        import multiprocessing as mp

        with mp.Pool(
            args.jobs, initializer=_eval_worker_init, initargs=(args.model, config.to_json())
        ) as pool:
            evals = pool.map(_eval_worker, records)
    else:
        evals = [_evaluate_pair(pipeline, config, rec) for rec in records]
    m = config.raw["metrics"]
    n_steps = max((len(e.per_step_rmse) for e in evals), default=0)
    per_step_rmse = []
    per_step_rr = []
    for k in range(n_steps):
        step_vals = [e.per_step_rmse[k] for e in evals if len(e.per_step_rmse) > k]
        per_step_rmse.append(sum(step_vals) / len(step_vals))
        per_step_rr.append(sum(v < m["rmse_thresh"] for v in step_vals) / len(step_vals))
    report = {
        "pairs": len(evals),
        "metrics": {
            "rr": metrics_mod.registration_recall(evals, m["rmse_thresh"]),
            "ir": metrics_mod.mean_inlier_ratio(evals),
            "fmr": metrics_mod.fmr(evals, m["ir_thresh"]),
            "pose_recall": metrics_mod.pose_recall(
                evals, math.radians(m["rre_thresh_deg"]), m["rte_thresh"]
            ),
        },
        "per_step": {"rmse_mean": per_step_rmse, "rr": per_step_rr},
        "recall_by_overlap": metrics_mod.recall_by_overlap(
            evals, m["overlap_bins"], m["rmse_thresh"]
        ),
        "per_pair": [
            {
                "rmse": e.rmse,
                "rre": e.rre,
                "rte": e.rte,
                "ir": e.inlier_ratio,
                "correspondences": e.correspondence_count,
                "overlap": e.overlap,
                "per_step_rmse": e.per_step_rmse,
            }
            for e in evals
        ],
    }
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write("pair,rmse,rre,rte,ir,correspondences,overlap\n")
            for i, e in enumerate(evals):
                fh.write(
                    f"{i},{e.rmse},{e.rre},{e.rte},{e.inlier_ratio},"
                    f"{e.correspondence_count},{e.overlap}\n"
                )
    print(args.report)
    return EXIT_OK


def cmd_degrade_inspect(args) -> int:
    prior = _parse_prior(args.prior)
    gt = _parse_prior(args.gt)
    schedule = DegradationSchedule(T=args.T, K=args.K)
    taus = sorted(set(np.linspace(0, schedule.T, args.levels).astype(int).tolist()))
    print(f"{'tau':>6} {'alpha':>8} {'group':>6} {'rot_err_deg':>12} {'trans_err_m':>12}")
    for tau in taus:
        x = degrade(prior, gt, tau, schedule.T)
        group = "-" if tau == 0 else str(group_index(tau, schedule.T, schedule.K))
        rot = math.degrees(rotation_error(x.q, gt.q))
        trans = translation_error(x.t, gt.t)
        print(f"{tau:>6} {tau / schedule.T:>8.4f} {group:>6} {rot:>12.6f} {trans:>12.6f}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="stepreg", description="Multi-step point cloud registration toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic pairs + manifest")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the refinement pipeline")
    p.add_argument("--config", help="run config JSON")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("register", help="register one pair, trajectory JSON on stdout")
    p.add_argument("model", help="checkpoint path (expects sidecar .json config)")
    p.add_argument("source", help="source PLY")
    p.add_argument("target", help="target PLY")
    p.add_argument("--prior", default="identity", help="'identity', 'none', or transform JSON")
    p.add_argument("--steps", type=int, default=None, help="run only the first N step models")
    p.add_argument("--dump-corr", default=None, help="write final fine correspondences (JSON lines)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("eval", help="evaluate a manifest, write a metrics report")
    p.add_argument("model")
    p.add_argument("manifest")
    p.add_argument("report", help="output report JSON path")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--csv", default=None, help="optional per-pair CSV path")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("degrade-inspect", help="table of degraded priors across accuracy levels")
    p.add_argument("--prior", required=True, help="'identity' or transform JSON")
    p.add_argument("--gt", required=True, help="'identity' or transform JSON")
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--K", type=int, default=5)
    p.add_argument("--levels", type=int, default=21)
    p.set_defaults(func=cmd_degrade_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergence as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except EstimationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ESTIMATION
    except (OSError, PlyParseError, json.JSONDecodeError, StepRegError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
