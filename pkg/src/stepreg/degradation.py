"""Controlled-accuracy prior generation and accuracy-level routing.

A prior of accuracy level tau in [0, T] interpolates between an external
prior transform (tau=0) and the ground truth (tau=T): Slerp for rotation,
linear for translation. Levels 1..T are divided linearly into K groups,
one per step model; tau=0 is reserved for the raw prior and never routed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RigidTransform, slerp


@dataclass(frozen=True)
class DegradationSchedule:
    T: int = 1000
    K: int = 5

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.T < self.K:
            raise ValueError("need T >= K")

    def to_json(self):
        return {"T": self.T, "K": self.K}

    @staticmethod
    def from_json(obj):
        return DegradationSchedule(T=int(obj["T"]), K=int(obj["K"]))


@dataclass(frozen=True)
class PriorSample:
    transform: RigidTransform
    tau: int
    group: int


def degrade(prior: RigidTransform, gt: RigidTransform, tau: int, T: int) -> RigidTransform:
    """Prior of accuracy tau/T between the external prior and the ground truth."""
    if not 0 <= tau <= T:
        raise ValueError(f"tau must be in [0, {T}], got {tau}")
    alpha = tau / T
    q = slerp(prior.q, gt.q, alpha)
    t = (1.0 - alpha) * prior.t + alpha * gt.t
    return RigidTransform(q, t)


def group_index(tau: int, T: int, K: int) -> int:
    """Step-model index ceil((tau / T) * K) for tau in [1, T]."""
    if not 1 <= tau <= T:
        raise ValueError(f"tau must be in [1, {T}], got {tau}")
    return -((-tau * K) // T)


def group_tau_range(group: int, T: int, K: int):
    """Closed integer range [lo, hi] of accuracy levels routed to a group."""
    if not 1 <= group <= K:
        raise ValueError(f"group must be in [1, {K}], got {group}")
    lo = (group - 1) * T // K + 1
    hi = group * T // K
    return lo, hi


def sample_tau(rng_seed: int, group: int, schedule: DegradationSchedule) -> int:
    """Uniform accuracy level within a group; deterministic per seed."""
    rng = np.random.default_rng(rng_seed)
    return draw_tau(rng, group, schedule)


def draw_tau(rng: np.random.Generator, group: int, schedule: DegradationSchedule) -> int:
    lo, hi = group_tau_range(group, schedule.T, schedule.K)
    return int(rng.integers(lo, hi + 1))


def make_prior_sample(
    prior: RigidTransform, gt: RigidTransform, tau: int, schedule: DegradationSchedule
) -> PriorSample:
    return PriorSample(
        transform=degrade(prior, gt, tau, schedule.T),
        tau=tau,
        group=group_index(tau, schedule.T, schedule.K),
    )
