"""Frozen-policy evaluation and the zero-shot farm-to-lunar transfer protocol.

Evaluation runs episodes with deterministic (mean) actions until a minimum
number of outcomes is reached, bucketing timesteps by success/failure so the
normalized timesteps-per-success and timesteps-per-failure ratios satisfy
ts_per_success*successes + ts_per_failure*failures == total_timesteps exactly.
The transfer protocol repeats independent evaluations with distinct seeds
against the lunar domain and reports mean and best success rates. The paper's
full-scale reference point for this protocol is a 46.69% mean / 73.33% best
success rate over 10 runs; at desk scale it is a reference, not an assertion.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import nn
from . import rng as rngmod
from . import terrain as terrainmod
from .env import DomainConfig, NavigationEnv, Observation, OutcomeKind
from .rover import BodyCommand, ControlLimits, RoverGeometry

Policy = Callable[[list[float]], BodyCommand]

DEFAULT_MIN_OUTCOMES = 170


@dataclass(frozen=True)
class EvalMetrics:
    successes: int = 0
    collisions: int = 0
    oob: int = 0
    timeouts: int = 0
    total_timesteps: int = 0
    success_steps: int = 0
    failure_steps: int = 0

    @property
    def failures(self) -> int:
        return self.collisions + self.oob + self.timeouts

    @property
    def total_outcomes(self) -> int:
        return self.successes + self.failures

    @property
    def success_rate(self) -> float:
        return self.successes / self.total_outcomes if self.total_outcomes else 0.0

    @property
    def ts_per_success(self) -> float | None:
        return self.success_steps / self.successes if self.successes else None

    @property
    def ts_per_failure(self) -> float | None:
        return self.failure_steps / self.failures if self.failures else None


@dataclass(frozen=True)
class TransferReport:
    runs: tuple[EvalMetrics, ...]
    seeds: tuple[int, ...]
    layout_digests: tuple[str, ...]

    @property
    def mean_success_rate(self) -> float:
        return sum(m.success_rate for m in self.runs) / len(self.runs)

    @property
    def best_success_rate(self) -> float:
        return max(m.success_rate for m in self.runs)


def mean_policy(params: nn.PolicyParams, limits: ControlLimits) -> Policy:
    """Deterministic policy: network mean, clamped to [-1, 1] and scaled to the
    command limits. No sampling, so run-to-run variance comes only from
    layout randomization."""

    def act(raw_obs: list[float]) -> BodyCommand:
        x = nn.normalize_obs(np.asarray(raw_obs), limits.v_max)
        mean, _, _ = nn.forward(params, x)
        a0 = min(max(float(mean[0]), -1.0), 1.0)
        a1 = min(max(float(mean[1]), -1.0), 1.0)
        return BodyCommand(v=a0 * limits.v_max, omega=a1 * limits.omega_max)

    return act


def _layout_hash(env: NavigationEnv, digest: "hashlib._Hash") -> None:
    s = env.state
    digest.update(struct.pack("<3d", s.x, s.y, s.heading))
    digest.update(struct.pack("<2d", *env.goal))
    for ox, oy in env.obstacles:
        digest.update(struct.pack("<2d", ox, oy))


def evaluate(policy: Policy, domain: DomainConfig, geometry: RoverGeometry,
             limits: ControlLimits, min_outcomes: int, seed: int,
             max_episode_steps: int = 1000,
             ) -> tuple[EvalMetrics, str, list]:
    """Run episodes until min_outcomes outcomes are observed.

    Returns (metrics, layout digest, per-episode outcomes). The terrain is
    regenerated from the evaluation seed and obstacles are re-randomized every
    episode; the goal follows the domain's goal mode. Deterministic for a
    fixed (policy, domain, seed).
    """
    if min_outcomes < 1:
        raise ValueError("min_outcomes must be >= 1")
    hf = terrainmod.generate_heightfield(replace(domain.terrain, seed=seed))
    env = NavigationEnv(domain, geometry, limits, hf,
                        rngmod.stream(seed, rngmod.EVAL_ENV),
                        max_episode_steps=max_episode_steps)
    counts = {k: 0 for k in OutcomeKind}
    total_steps = 0
    success_steps = 0
    failure_steps = 0
    outcomes = []
    digest = hashlib.sha256()
    for _ in range(min_outcomes):
        obs = env.reset()
        _layout_hash(env, digest)
        while True:
            obs, _, outcome = env.step(policy(obs.as_vector()))
            if outcome is not None:
                break
        counts[outcome.kind] += 1
        total_steps += outcome.steps
        if outcome.kind is OutcomeKind.SUCCESS:
            success_steps += outcome.steps
        else:
            failure_steps += outcome.steps
        outcomes.append(outcome)
    metrics = EvalMetrics(
        successes=counts[OutcomeKind.SUCCESS],
        collisions=counts[OutcomeKind.COLLISION],
        oob=counts[OutcomeKind.OUT_OF_BOUNDS],
        timeouts=counts[OutcomeKind.TIMEOUT],
        total_timesteps=total_steps,
        success_steps=success_steps,
        failure_steps=failure_steps,
    )
    return metrics, digest.hexdigest()[:16], outcomes


def transfer_protocol(params: nn.PolicyParams, lunar: DomainConfig,
                      geometry: RoverGeometry, limits: ControlLimits,
                      runs: int = 10, min_outcomes: int = DEFAULT_MIN_OUTCOMES,
                      base_seed: int = 0,
                      max_episode_steps: int = 1000) -> TransferReport:
    """Independent lunar evaluations with distinct per-run seeds."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    policy = mean_policy(params, limits)
    metrics: list[EvalMetrics] = []
    seeds: list[int] = []
    digests: list[str] = []
    for r in range(runs):
        seed = (base_seed + rngmod.EVAL_RUN_BASE + r) & ((1 << 64) - 1)
        m, d, _ = evaluate(policy, lunar, geometry, limits, min_outcomes, seed,
                        max_episode_steps=max_episode_steps)
        metrics.append(m)
        seeds.append(seed)
        digests.append(d)
    return TransferReport(runs=tuple(metrics), seeds=tuple(seeds),
                          layout_digests=tuple(digests))


def compare_domains(params: nn.PolicyParams, farm: DomainConfig,
                    lunar: DomainConfig, episodes: int, geometry: RoverGeometry,
                    limits: ControlLimits, seed: int = 0,
                    max_episode_steps: int = 1000) -> tuple[EvalMetrics, EvalMetrics]:
    """Same frozen policy and seed in both domains, matched episode counts."""
    policy = mean_policy(params, limits)
    farm_m, _, _ = evaluate(policy, farm, geometry, limits, episodes, seed,
                         max_episode_steps=max_episode_steps)
    lunar_m, _, _ = evaluate(policy, lunar, geometry, limits, episodes, seed,
                          max_episode_steps=max_episode_steps)
    return farm_m, lunar_m


TRANSFER_COLUMNS = ("run", "seed", "successes", "collisions", "oob", "timeouts",
                    "total_timesteps", "success_rate", "ts_per_success",
                    "ts_per_failure")


def _ratio_str(v: float | None) -> str:
    return "nan" if v is None else repr(v)


def write_transfer_csv(report: TransferReport, fp) -> None:
    """Per-run rows plus one 'mean' summary row. The summary success_rate is
    the mean of the per-run rates; its counts and timestep ratios aggregate
    over all runs."""
    fp.write(",".join(TRANSFER_COLUMNS) + "\n")
    for i, (m, seed) in enumerate(zip(report.runs, report.seeds)):
        fp.write(f"{i},{seed},{m.successes},{m.collisions},{m.oob},{m.timeouts},"
                 f"{m.total_timesteps},{m.success_rate!r},"
                 f"{_ratio_str(m.ts_per_success)},{_ratio_str(m.ts_per_failure)}\n")
    agg = EvalMetrics(
        successes=sum(m.successes for m in report.runs),
        collisions=sum(m.collisions for m in report.runs),
        oob=sum(m.oob for m in report.runs),
        timeouts=sum(m.timeouts for m in report.runs),
        total_timesteps=sum(m.total_timesteps for m in report.runs),
        success_steps=sum(m.success_steps for m in report.runs),
        failure_steps=sum(m.failure_steps for m in report.runs),
    )
    fp.write(f"mean,-,{agg.successes},{agg.collisions},{agg.oob},{agg.timeouts},"
             f"{agg.total_timesteps},{report.mean_success_rate!r},"
             f"{_ratio_str(agg.ts_per_success)},{_ratio_str(agg.ts_per_failure)}\n")


EVAL_EPISODE_COLUMNS = ("episode", "outcome", "steps", "final_distance")
