"""Run configuration: one JSON document mirroring every module's knobs.

Validation is strict: unknown keys are rejected, values are type- and
range-checked before any work starts. Radii left null default to twice
the fine voxel size.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

from .errors import ConfigError

_DEFAULTS = {
    "seed": None,
    "voxel": {"fine": 0.025, "super_ratio": 8.0},
    "features": {"neighbors": 16, "d_super": 64, "d_fine": 32},
    "attention": {"layers": 3, "heads": 4},
    "schedule": {"T": 1000, "K": 5},
    "matching": {"top_k": 32, "conf_thresh": 0.05},
    "estimator": {
        "kind": "lgr",
        "inlier_radius": None,
        "refine_iters": 5,
        "ransac_iters": 1000,
        "weighted_sampling": True,
    },
    "overlap": {"radius": None, "anchor_threshold": 0.0},
    "training": {
        "epochs": 30,
        "batch": 1,
        "lr": 1e-3,
        "momentum": 0.9,
        "margin_pos": 0.1,
        "margin_neg": 1.4,
        "gamma": 24.0,
        "match_temperature": 0.1,
        "clip_norm": 5.0,
    },
    "generation": {
        "pairs": 8,
        "points": 3000,
        "room_extent": 5.0,
        "planes": 3,
        "boxes": 5,
        "cylinders": 3,
        "noise_sigma": 0.005,
        "overlap_targets": [0.1, 0.2, 0.3],
        "rot_range": [0.2, 1.0],
        "trans_range": [0.2, 1.0],
        "prior_rot_err": [0.2, 0.6],
        "prior_trans_err": [0.2, 0.6],
    },
    "metrics": {
        "rmse_thresh": 0.2,
        "ir_radius": 0.1,
        "ir_thresh": 0.05,
        "rre_thresh_deg": 5.0,
        "rte_thresh": 2.0,
        "overlap_bins": [0.15, 0.2, 0.25, 0.3],
    },
}

_NUMERIC = (int, float)


def _check_types(defaults, user, path=""):
    for key, value in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        ref = defaults[key]
        if isinstance(ref, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            _check_types(ref, value, path + key + ".")
        elif isinstance(ref, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"config key {path + key!r} must be a boolean")
        elif isinstance(ref, _NUMERIC) or ref is None:
            if value is not None and not isinstance(value, _NUMERIC):
                raise ConfigError(f"config key {path + key!r} must be a number")
        elif isinstance(ref, str):
            if not isinstance(value, str):
                raise ConfigError(f"config key {path + key!r} must be a string")
        elif isinstance(ref, list):
            if not isinstance(value, list) or not all(isinstance(v, _NUMERIC) for v in value):
                raise ConfigError(f"config key {path + key!r} must be a numeric array")


def _merge(defaults, user):
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if isinstance(value, dict):
            out[key] = _merge(defaults[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class RunConfig:
    raw: dict = field(repr=False)

    @staticmethod
    def load(path=None, overrides=None) -> "RunConfig":
        user = {}
        if path is not None:
            with open(path, "r", encoding="utf-8") as fh:
                user = json.load(fh)
            if not isinstance(user, dict):
                raise ConfigError("config root must be a JSON object")
        _check_types(_DEFAULTS, user)
        merged = _merge(_DEFAULTS, user)
        for dotted, value in (overrides or {}).items():
            node = merged
            parts = dotted.split(".")
            for part in parts[:-1]:
                if part not in node:
                    raise ConfigError(f"unknown config key {dotted!r}")
                node = node[part]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {dotted!r}")
            node[parts[-1]] = value
        cfg = RunConfig(raw=merged)
        cfg.validate()
        return cfg

    def __getitem__(self, key):
        return self.raw[key]

    def validate(self):
        r = self.raw
        if r["voxel"]["fine"] <= 0 or r["voxel"]["super_ratio"] <= 1:
            raise ConfigError("voxel.fine must be > 0 and voxel.super_ratio > 1")
        if r["schedule"]["K"] < 1 or r["schedule"]["T"] < r["schedule"]["K"]:
            raise ConfigError("schedule requires T >= K >= 1")
        if r["attention"]["layers"] < 1:
            raise ConfigError("attention.layers must be >= 1")
        if r["features"]["d_super"] % r["attention"]["heads"] != 0:
            raise ConfigError("features.d_super must be divisible by attention.heads")
        if r["estimator"]["kind"] not in ("lgr", "ransac"):
            raise ConfigError("estimator.kind must be 'lgr' or 'ransac'")
        for name in ("epochs", "batch"):
            if r["training"][name] < 1:
                raise ConfigError(f"training.{name} must be >= 1")
        for name in ("lr", "gamma", "match_temperature"):
            if r["training"][name] <= 0:
                raise ConfigError(f"training.{name} must be positive")
        for target in r["generation"]["overlap_targets"]:
            if not 0.05 <= target <= 1.0:
                raise ConfigError("generation.overlap_targets must lie in [0.05, 1]")

    @property
    def fine_voxel(self):
        return float(self.raw["voxel"]["fine"])

    @property
    def super_voxel(self):
        return self.fine_voxel * float(self.raw["voxel"]["super_ratio"])

    @property
    def overlap_radius(self):
        r = self.raw["overlap"]["radius"]
        return 2.0 * self.fine_voxel if r is None else float(r)

    @property
    def inlier_radius(self):
        r = self.raw["estimator"]["inlier_radius"]
        return 2.0 * self.fine_voxel if r is None else float(r)

    @property
    def seed(self):
        return self.raw["seed"]

    def to_json(self) -> dict:
        return copy.deepcopy(self.raw)
