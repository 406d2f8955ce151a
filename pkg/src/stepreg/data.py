"""Synthetic scene pairs with controllable overlap, PLY I/O, and manifests.

A scene is a room (floor plus walls) furnished with boxes and cylinders,
surface-sampled once. Two opposing view frusta carve the sample into a
target view and a source view; the source frustum's near plane is tuned
by bisection until the measured overlap ratio hits the requested target.
The source view is moved by the inverse ground-truth transform and both
views receive independent Gaussian sensor noise.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .cloud import PointCloud, voxel_downsample
from .errors import OverlapTargetError, PlyParseError
from .geometry import (
    RigidTransform,
    apply_transform,
    inverse,
    quat_from_axis_angle,
    quat_multiply,
)

_BISECT_STEPS = 50
_BISECT_TOL = 0.02


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    room_extent: float = 5.0
    planes: int = 3
    boxes: int = 4
    cylinders: int = 2
    points_per_cloud: int = 3000
    target_overlap: float = 0.3
    noise_sigma: float = 0.005
    rot_range: tuple = (0.2, 1.0)  # radians
    trans_range: tuple = (0.2, 1.0)  # meters
    fine_voxel: float = 0.025  # used only to measure the recorded overlap

    def __post_init__(self):
        if not 0.05 <= self.target_overlap <= 1.0:
            raise ValueError("target_overlap must be in [0.05, 1]")
        if min(self.planes, self.points_per_cloud) < 1 or self.boxes < 0 or self.cylinders < 0:
            raise ValueError("primitive and point counts must be positive")
        if self.room_extent <= 0 or self.noise_sigma < 0 or self.fine_voxel <= 0:
            raise ValueError("room_extent and fine_voxel must be positive, noise_sigma >= 0")

    @property
    def overlap_radius(self):
        return 2.0 * self.fine_voxel


@dataclass(frozen=True)
class PairRecord:
    source: str
    target: str
    gt: RigidTransform
    prior: RigidTransform | None
    overlap: float

    def to_json(self):
        return {
            "source": self.source,
            "target": self.target,
            "gt": self.gt.to_json(),
            "prior": None if self.prior is None else self.prior.to_json(),
            "overlap": self.overlap,
        }

    @staticmethod
    def from_json(obj):
        return PairRecord(
            source=obj["source"],
            target=obj["target"],
            gt=RigidTransform.from_json(obj["gt"]),
            prior=None if obj.get("prior") is None else RigidTransform.from_json(obj["prior"]),
            overlap=float(obj["overlap"]),
        )


def _unit(rng: np.random.Generator, dims=3) -> np.ndarray:
    while True:
        v = rng.normal(size=dims)
        n = np.linalg.norm(v)
        if n > 1e-6:
            return v / n


def _sample_plane(rng, origin, ax_u, ax_v, count):
    uv = rng.uniform(size=(count, 2))
    return origin + uv[:, :1] * ax_u + uv[:, 1:] * ax_v


def _sample_box(rng, center, half, yaw, count):
    # pick faces proportional to area, sample in local frame, rotate by yaw
    hx, hy, hz = half
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy]) * 4.0
    faces = rng.choice(6, size=count, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(count, 3)) * half
    axis = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    pts[np.arange(count), axis] = sign * half[axis]
    cz, sz = math.cos(yaw), math.sin(yaw)
    rot = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    return center + pts @ rot.T


def _sample_cylinder(rng, center_xy, radius, height, count):
    theta = rng.uniform(0.0, 2.0 * math.pi, size=count)
    z = rng.uniform(0.0, height, size=count)
    return np.stack(
        [center_xy[0] + radius * np.cos(theta), center_xy[1] + radius * np.sin(theta), z], axis=1
    )


def _sample_scene(spec: SceneSpec, rng: np.random.Generator, total: int) -> np.ndarray:
    e = spec.room_extent
    surfaces = []  # (area, sampler)
    wall_h = 0.5 * e
    surfaces.append((e * e, lambda n: _sample_plane(rng, np.zeros(3), np.array([e, 0, 0]), np.array([0, e, 0]), n)))
    walls = [
        (np.zeros(3), np.array([e, 0, 0]), np.array([0, 0, wall_h])),
        (np.zeros(3), np.array([0, e, 0]), np.array([0, 0, wall_h])),
        (np.array([0.0, e, 0.0]), np.array([e, 0, 0]), np.array([0, 0, wall_h])),
        (np.array([e, 0.0, 0.0]), np.array([0, e, 0]), np.array([0, 0, wall_h])),
    ]
    for w in range(max(0, spec.planes - 1)):
        origin, u, v = walls[w % 4]
        surfaces.append((e * wall_h, lambda n, o=origin, a=u, b=v: _sample_plane(rng, o, a, b, n)))
    for _ in range(spec.boxes):
        half = rng.uniform(0.15, 0.6, size=3)
        center = np.array(
            [rng.uniform(0.8, e - 0.8), rng.uniform(0.8, e - 0.8), half[2]]
        )
        yaw = rng.uniform(0.0, 2.0 * math.pi)
        area = 8.0 * (half[0] * half[1] + half[0] * half[2] + half[1] * half[2])
        surfaces.append((area, lambda n, c=center, h=half, y=yaw: _sample_box(rng, c, h, y, n)))
    for _ in range(spec.cylinders):
        radius = rng.uniform(0.1, 0.4)
        height = rng.uniform(0.5, 2.0)
        center_xy = rng.uniform(0.8, e - 0.8, size=2)
        area = 2.0 * math.pi * radius * height
        surfaces.append((area, lambda n, c=center_xy, r=radius, h=height: _sample_cylinder(rng, c, r, h, n)))
    areas = np.array([a for a, _ in surfaces])
    counts = np.maximum(1, np.floor(areas / areas.sum() * total).astype(int))
    parts = [sampler(int(c)) for (_, sampler), c in zip(surfaces, counts)]
    return np.concatenate(parts, axis=0)


def _measured_overlap(source: PointCloud, target: PointCloud, gt: RigidTransform, spec: SceneSpec) -> float:
    fine_p = voxel_downsample(source, spec.fine_voxel).points
    fine_q = voxel_downsample(target, spec.fine_voxel).points
    if fine_p.shape[0] == 0:
        return 0.0
    hits = _kernels.has_neighbor(apply_transform(gt, fine_p), fine_q, spec.overlap_radius)
    return float(hits.mean())


def generate_pair(spec: SceneSpec):
    """One synthetic pair: returns (source cloud, target cloud, PairRecord).

    The record's source/target paths are empty; callers that persist the
    clouds fill them in.
    """
    rng = np.random.default_rng(spec.seed)
    scene = _sample_scene(spec, rng, 2 * spec.points_per_cloud)
    u = np.concatenate([_unit(rng, 2), [0.0]])
    s = scene @ u
    target_frac = min(0.97, max(0.55, 0.5 + 0.6 * spec.target_overlap))

    if spec.target_overlap >= 0.999:
        a_idx = np.ones(scene.shape[0], dtype=bool)
        b_idx = a_idx
    else:
        a_cut = np.quantile(s, target_frac)
        a_idx = s <= a_cut
        # one neighbor query suffices: shared coordinates make every source
        # point at s <= a_cut an exact hit, the band beyond is precomputed
        beyond = np.flatnonzero(~a_idx)
        hit_beyond = np.zeros(scene.shape[0], dtype=bool)
        if beyond.size:
            hit_beyond[beyond] = _kernels.has_neighbor(
                scene[beyond], scene[a_idx], spec.overlap_radius
            )
        covered = a_idx | hit_beyond

        # overlap fraction of the source view decreases as its cut rises
        lo, hi = float(s.min()), float(a_cut)
        b_cut = None
        for _ in range(_BISECT_STEPS):
            mid = 0.5 * (lo + hi)
            b_sel = s >= mid
            frac = float(covered[b_sel].mean()) if b_sel.any() else 0.0
            if abs(frac - spec.target_overlap) <= _BISECT_TOL:
                b_cut = mid
                break
            if frac < spec.target_overlap:
                hi = mid
            else:
                lo = mid
        if b_cut is None:
            raise OverlapTargetError("overlap target infeasible")
        b_idx = s >= b_cut

    target_pts = scene[a_idx]
    source_scene_pts = scene[b_idx]

    # scan-like motion: yaw about gravity, translation mostly horizontal
    angle = rng.uniform(*spec.rot_range) * (1.0 if rng.uniform() < 0.5 else -1.0)
    q = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), angle)
    direction = np.concatenate([_unit(rng, 2), [rng.uniform(-0.2, 0.2)]])
    direction /= np.linalg.norm(direction)
    t = direction * rng.uniform(*spec.trans_range)
    gt = RigidTransform(q, t)

    source_pts = apply_transform(inverse(gt), source_scene_pts)
    if spec.noise_sigma > 0:
        source_pts = source_pts + rng.normal(0.0, spec.noise_sigma, source_pts.shape)
        target_pts = target_pts + rng.normal(0.0, spec.noise_sigma, target_pts.shape)
    source = PointCloud(source_pts)
    target = PointCloud(target_pts)

    measured = _measured_overlap(source, target, gt, spec)
    if abs(measured - spec.target_overlap) > 0.05:
        raise OverlapTargetError(
            f"overlap target infeasible: measured {measured:.3f} vs target {spec.target_overlap:.3f}"
        )
    record = PairRecord(source="", target="", gt=gt, prior=None, overlap=measured)
    return source, target, record


def synth_prior(gt: RigidTransform, rot_err: float, trans_err: float, seed: int) -> RigidTransform:
    """gt perturbed by exactly rot_err radians about a random axis and a
    random translation offset of norm trans_err."""
    if rot_err < 0 or trans_err < 0:
        raise ValueError("error magnitudes must be non-negative")
    rng = np.random.default_rng(seed)
    q = quat_multiply(quat_from_axis_angle(_unit(rng), rot_err), gt.q)
    t = gt.t + _unit(rng) * trans_err
    return RigidTransform(q, t)


def save_ply(path, cloud: PointCloud):
    pts = cloud.points
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pts.shape[0]}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    body = [f"{p[0]:.7f} {p[1]:.7f} {p[2]:.7f}" for p in pts]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines + body))
        fh.write("\n")


def load_ply(path) -> PointCloud:
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PlyParseError("missing 'ply' magic", line_no=1)
    count = None
    props = []
    header_end = None
    for no, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "comment":
            continue
        if tokens[0] == "format":
            if tokens[1:] != ["ascii", "1.0"]:
                raise PlyParseError(f"unsupported PLY format {' '.join(tokens[1:])!r}", line_no=no)
        elif tokens[0] == "element":
            if tokens[1] != "vertex" or len(tokens) != 3:
                raise PlyParseError("only a single vertex element is supported", line_no=no)
            count = int(tokens[2])
        elif tokens[0] == "property":
            if len(tokens) != 3 or tokens[1] not in ("float", "float32", "double", "float64"):
                raise PlyParseError("vertex properties must be float x/y/z", line_no=no)
            props.append(tokens[2])
        elif tokens[0] == "end_header":
            header_end = no
            break
        else:
            raise PlyParseError(f"unexpected header token {tokens[0]!r}", line_no=no)
    if header_end is None or count is None:
        raise PlyParseError("header ended before element/end_header", line_no=len(lines))
    if props != ["x", "y", "z"]:
        raise PlyParseError(f"expected properties x, y, z, got {props}", line_no=header_end)
    body = lines[header_end:header_end + count]
    if len(body) < count:
        raise PlyParseError(f"expected {count} vertex lines", line_no=len(lines))
    pts = np.empty((count, 3))
    for i, line in enumerate(body):
        tokens = line.split()
        if len(tokens) != 3:
            raise PlyParseError("vertex line must hold 3 coordinates", line_no=header_end + 1 + i)
        try:
            pts[i] = [float(v) for v in tokens]
        except ValueError:
            raise PlyParseError("bad coordinate literal", line_no=header_end + 1 + i) from None
    return PointCloud(pts)


def save_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([r.to_json() for r in records], fh, indent=1)
        fh.write("\n")


def load_manifest(path):
    base = os.path.dirname(os.path.abspath(path))
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    records = []
    for obj in raw:
        rec = PairRecord.from_json(obj)
        records.append(
            replace(
                rec,
                source=os.path.join(base, rec.source),
                target=os.path.join(base, rec.target),
            )
        )
    return records
