"""PPO training: synchronous rollouts over parallel environments, generalized
advantage estimation, and the clipped-surrogate (or adaptive-KL-penalty) update.

The desk profile (8 envs x 256 steps, minibatch 512, 8 mini-epochs) is sized
for a single desktop CPU; the paper-scale profile (2048 steps, minibatch
16384, 1.2e7 env steps, 150-iteration cap) ships as a named preset.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckptmod
from . import nn
from . import rng as rngmod
from . import terrain as terrainmod
from .env import DomainConfig, NavigationEnv, OutcomeKind, DEFAULT_EPISODE_MAX_STEPS
from .rover import BodyCommand, ControlLimits, RoverGeometry

TELEMETRY_COLUMNS = (
    "iteration", "env_steps", "mean_reward", "success_count", "collision_count",
    "oob_count", "timeout_count", "mean_episode_len", "policy_loss", "value_loss",
    "entropy", "mean_kl", "beta", "clip_fraction",
)


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, stats: "UpdateStats | None", message: str):
        super().__init__(message)
        self.iteration = iteration
        self.stats = stats


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    lr: float = 5e-4
    clip_eps: float = 0.2
    kl_target: float = 0.008
    n_steps: int = 256
    n_envs: int = 8
    minibatch_size: int = 512
    mini_epochs: int = 8
    max_iterations: int = 1_000_000
    critic_coef: float = 4.0
    entropy_coef: float = 0.0005
    bound_coef: float = 1e-4
    total_env_steps: int = 1_000_000
    objective: str = "clip"  # "clip" or "kl_penalty"
    # Returns reach several hundred reward units over long episodes; the value
    # head reads a tanh trunk, so targets that size saturate the shared
    # features. Rewards are scaled by this factor on the training path only
    # (buffer, GAE, value targets); telemetry reports raw env rewards.
    reward_scale: float = 0.01
    # Initial policy spread. The action box is [-1, 1]; a unit sigma buries the
    # mean gradient in clipped noise, so start tighter.
    log_std_init: float = -0.7

    def validate(self) -> None:
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.lam <= 1.0):
            raise ValueError("gamma and lam must lie in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip_eps must be > 0")
        batch = self.n_steps * self.n_envs
        if batch % self.minibatch_size != 0:
            raise ValueError(
                f"minibatch_size {self.minibatch_size} must divide "
                f"n_steps*n_envs = {batch}")
        if self.objective not in ("clip", "kl_penalty"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if min(self.n_steps, self.n_envs, self.minibatch_size, self.mini_epochs,
               self.max_iterations, self.total_env_steps) <= 0:
            raise ValueError("all loop sizes must be positive")


def desk_config(**overrides) -> PpoConfig:
    return replace(PpoConfig(), **overrides)


def paper_config(**overrides) -> PpoConfig:
    base = PpoConfig(n_steps=2048, n_envs=8, minibatch_size=16384, mini_epochs=8,
                     total_env_steps=12_000_000, max_iterations=150)
    return replace(base, **overrides)


@dataclass
class RolloutBuffer:
    """Per-(step, env) trajectories plus GAE outputs. Flattened sample index is
    t * n_envs + i (C order)."""

    obs: np.ndarray          # (T, N, 12) normalized
    actions: np.ndarray      # (T, N, 2)
    logp_old: np.ndarray     # (T, N)
    rewards: np.ndarray      # (T, N)
    values: np.ndarray       # (T, N)
    dones: np.ndarray        # (T, N) float 0/1
    mean_old: np.ndarray     # (T, N, 2)
    log_std_old: np.ndarray  # (2,)
    bootstrap: np.ndarray    # (N,)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    @classmethod
    def allocate(cls, n_steps: int, n_envs: int) -> "RolloutBuffer":
        return cls(
            obs=np.zeros((n_steps, n_envs, nn.OBS_DIM)),
            actions=np.zeros((n_steps, n_envs, nn.ACTION_DIM)),
            logp_old=np.zeros((n_steps, n_envs)),
            rewards=np.zeros((n_steps, n_envs)),
            values=np.zeros((n_steps, n_envs)),
            dones=np.zeros((n_steps, n_envs)),
            mean_old=np.zeros((n_steps, n_envs, nn.ACTION_DIM)),
            log_std_old=np.zeros(nn.ACTION_DIM),
            bootstrap=np.zeros(n_envs),
        )

    @property
    def size(self) -> int:
        return self.obs.shape[0] * self.obs.shape[1]

    def minibatch(self, idx: np.ndarray) -> nn.Minibatch:
        t = self.obs.shape[0]
        n = self.obs.shape[1]
        return nn.Minibatch(
            obs=self.obs.reshape(t * n, -1)[idx],
            actions=self.actions.reshape(t * n, -1)[idx],
            logp_old=self.logp_old.reshape(-1)[idx],
            advantages=self.advantages.reshape(-1)[idx],
            value_targets=self.returns.reshape(-1)[idx],
            mean_old=self.mean_old.reshape(t * n, -1)[idx],
            log_std_old=self.log_std_old,
        )


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                bootstrap: np.ndarray, gamma: float, lam: float,
                normalize: bool = True, eps: float = 1e-8,
                ) -> tuple[np.ndarray, np.ndarray]:
    """Backward GAE recursion over (T, N) arrays.

    delta_t = r_t + gamma*v_{t+1}*(1-done_t) - v_t
    A_t     = delta_t + gamma*lam*(1-done_t)*A_{t+1}
    returns = raw advantages + values; advantages are then normalized to zero
    mean / unit variance over the whole batch (skipped for batches of one).
    """
    t_len = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = bootstrap
    gae = np.zeros(rewards.shape[1]) if rewards.ndim == 2 else 0.0
    for t in range(t_len - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        gae = delta + gamma * lam * not_done * gae
        adv[t] = gae
        next_value = values[t]
    returns = adv + values
    if normalize and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + eps)
    return adv, returns


def clip_objective(ratio, advantage, eps: float):
    """Per-sample clipped surrogate: min(r*A, clip(r, 1-eps, 1+eps)*A)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    return np.minimum(ratio * advantage,
                      np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage)


def kl_penalty_objective(ratio, advantage, kl, beta: float):
    """Per-sample penalized surrogate: r*A - beta*KL[old, new]."""
    return np.asarray(ratio, dtype=np.float64) * np.asarray(advantage, np.float64) \
        - beta * np.asarray(kl, dtype=np.float64)


def adaptive_kl_update(beta: float, measured_kl: float, kl_target: float) -> float:
    """Double beta when KL overshoots 1.5x target, halve below target/1.5."""
    if beta <= 0:
        raise ValueError("beta must be > 0")
    if measured_kl > 1.5 * kl_target:
        beta = 2.0 * beta
    elif measured_kl < kl_target / 1.5:
        beta = 0.5 * beta
    return min(max(beta, 1e-4), 1e4)


@dataclass
class WindowStats:
    """Episode outcomes observed during one rollout window."""

    success: int = 0
    collision: int = 0
    oob: int = 0
    timeout: int = 0
    episode_steps: list[int] = field(default_factory=list)
    raw_reward_sum: float = 0.0
    samples: int = 0

    @property
    def mean_raw_reward(self) -> float:
        return self.raw_reward_sum / self.samples if self.samples else 0.0

    def record(self, outcome) -> None:
        if outcome.kind is OutcomeKind.SUCCESS:
            self.success += 1
        elif outcome.kind is OutcomeKind.COLLISION:
            self.collision += 1
        elif outcome.kind is OutcomeKind.OUT_OF_BOUNDS:
            self.oob += 1
        else:
            self.timeout += 1
        self.episode_steps.append(outcome.steps)

    @property
    def mean_episode_len(self) -> float:
        return (sum(self.episode_steps) / len(self.episode_steps)
                if self.episode_steps else 0.0)


class EnvPool:
    """Synchronously-stepped set of independent environments plus the current
    raw observation matrix."""

    def __init__(self, envs: list[NavigationEnv], limits: ControlLimits):
        self.envs = envs
        self.limits = limits
        self.obs = np.zeros((len(envs), nn.OBS_DIM))
        for i, env in enumerate(envs):
            self.obs[i] = env.reset().as_vector()

    @property
    def n_envs(self) -> int:
        return len(self.envs)

    def snapshot(self) -> list[dict]:
        return [env.snapshot() for env in self.envs]

    def restore(self, snaps: list[dict]) -> None:
        for i, (env, snap) in enumerate(zip(self.envs, snaps)):
            env.restore(snap)
            self.obs[i] = env.observation().as_vector()


def collect_rollout(pool: EnvPool, params: nn.PolicyParams, n_steps: int,
                    rng: np.random.Generator,
                    reward_scale: float = 1.0) -> tuple[RolloutBuffer, WindowStats]:
    """Step every env n_steps times with the stochastic policy, auto-resetting
    terminal episodes inline. Stores normalized observations (the exact network
    inputs), rewards scaled by reward_scale, and the behavior policy's
    means/log-std for closed-form KL."""
    buf = RolloutBuffer.allocate(n_steps, pool.n_envs)
    stats = WindowStats()
    v_max = pool.limits.v_max
    omega_max = pool.limits.omega_max
    for t in range(n_steps):
        x = nn.normalize_obs(pool.obs, v_max)
        mean, log_std, value = nn.forward(params, x)
        actions, logp = nn.sample_action(mean, log_std, rng)
        cmd_scale = np.clip(actions, -1.0, 1.0)
        buf.obs[t] = x
        buf.actions[t] = actions
        buf.logp_old[t] = logp
        buf.values[t] = value
        buf.mean_old[t] = mean
        for i, env in enumerate(pool.envs):
            cmd = BodyCommand(v=cmd_scale[i, 0] * v_max, omega=cmd_scale[i, 1] * omega_max)
            obs, breakdown, outcome = env.step(cmd)
            raw = breakdown.total
            stats.raw_reward_sum += raw
            buf.rewards[t, i] = raw * reward_scale
            if outcome is not None:
                buf.dones[t, i] = 1.0
                stats.record(outcome)
                obs = env.reset()
            pool.obs[i] = obs.as_vector()
    stats.samples = n_steps * pool.n_envs
    buf.log_std_old = params.log_std.copy()
    _, _, boot = nn.forward(params, nn.normalize_obs(pool.obs, v_max))
    buf.bootstrap = boot
    return buf, stats


@dataclass(frozen=True)
class UpdateStats:
    policy_loss: float
    value_loss: float
    entropy: float
    mean_kl: float
    clip_fraction: float
    loss: float
    minibatches: int
    early_stopped: bool


def ppo_update(params: nn.PolicyParams, buf: RolloutBuffer, cfg: PpoConfig,
               adam: nn.AdamState, kl_beta: float,
               rng: np.random.Generator) -> tuple[UpdateStats, float]:
    """Run mini_epochs shuffled passes of minibatch Adam steps over the buffer.

    With the clip objective, updating stops for the iteration once a
    minibatch's mean KL against the behavior policy exceeds 1.5x kl_target.
    With the penalty objective, beta is adapted afterwards from the mean KL.
    Returns (stats, new_beta).
    """
    if buf.advantages is None or buf.returns is None:
        raise ValueError("rollout buffer has no advantages; run compute_gae first")
    spec = nn.LossSpec(objective=cfg.objective, clip_eps=cfg.clip_eps,
                       kl_beta=kl_beta, critic_coef=cfg.critic_coef,
                       entropy_coef=cfg.entropy_coef, bound_coef=cfg.bound_coef)
    total = buf.size
    n_batches = total // cfg.minibatch_size
    sums = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
            "mean_kl": 0.0, "clip_fraction": 0.0, "loss": 0.0}
    count = 0
    stopped = False
    for _ in range(cfg.mini_epochs):
        perm = rng.permutation(total)
        for k in range(n_batches):
            idx = perm[k * cfg.minibatch_size:(k + 1) * cfg.minibatch_size]
            grads, st = nn.backward(params, buf.minibatch(idx), spec)
            nn.adam_update(params, grads, adam, cfg.lr)
            count += 1
            for key in sums:
                sums[key] += getattr(st, key)
            if cfg.objective == "clip" and st.mean_kl > 1.5 * cfg.kl_target:
                stopped = True
                break
        if stopped:
            break
    mean_kl = sums["mean_kl"] / count
    if cfg.objective == "kl_penalty":
        kl_beta = adaptive_kl_update(kl_beta, mean_kl, cfg.kl_target)
    stats = UpdateStats(policy_loss=sums["policy_loss"] / count,
                        value_loss=sums["value_loss"] / count,
                        entropy=sums["entropy"] / count,
                        mean_kl=mean_kl,
                        clip_fraction=sums["clip_fraction"] / count,
                        loss=sums["loss"] / count,
                        minibatches=count, early_stopped=stopped)
    return stats, kl_beta


@dataclass
class TrainSetup:
    """Everything ppo.train needs, already resolved."""

    ppo: PpoConfig
    domain: DomainConfig
    geometry: RoverGeometry = field(default_factory=RoverGeometry)
    limits: ControlLimits = field(default_factory=ControlLimits)
    master_seed: int = 0
    out_dir: str | os.PathLike = "run"
    checkpoint_interval_steps: int = 200_000
    run_digest: str = "-"
    max_episode_steps: int = DEFAULT_EPISODE_MAX_STEPS


@dataclass
class TrainResult:
    params: nn.PolicyParams
    env_steps: int
    iterations: int
    best_mean_reward: float
    telemetry_path: Path
    final_checkpoint: Path
    best_checkpoint: Path


def _build_pool(setup: TrainSetup, hf: terrainmod.Heightfield) -> EnvPool:
    envs = [
        NavigationEnv(setup.domain, setup.geometry, setup.limits, hf,
                      rngmod.stream(setup.master_seed, rngmod.ENV_BASE + i),
                      max_episode_steps=setup.max_episode_steps)
        for i in range(setup.ppo.n_envs)
    ]
    return EnvPool(envs, setup.limits)


def train(setup: TrainSetup, resume_from: str | None = None) -> TrainResult:
    """Collect/update until the env-step budget or the iteration cap, writing
    telemetry every iteration plus periodic, best-mean-reward, and final
    checkpoints. Fully deterministic for a fixed setup."""
    cfg = setup.ppo
    cfg.validate()
    out_dir = Path(setup.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    telemetry_path = out_dir / "telemetry.csv"
    hf = terrainmod.generate_heightfield(setup.domain.terrain)
    pool = _build_pool(setup, hf)

    action_rng = rngmod.stream(setup.master_seed, rngmod.ACTION_SAMPLING)
    shuffle_rng = rngmod.stream(setup.master_seed, rngmod.MINIBATCH_SHUFFLE)
    adam = nn.AdamState()
    kl_beta = 1.0
    env_steps = 0
    iteration = 0
    best_mean = -math.inf

    if resume_from is None:
        params = nn.init_policy(rngmod.stream(setup.master_seed, rngmod.POLICY_INIT),
                                log_std_init=cfg.log_std_init)
        telemetry = open(telemetry_path, "w", newline="")
        writer = csv.writer(telemetry)
        writer.writerow(TELEMETRY_COLUMNS)
    else:
        ck = ckptmod.load_checkpoint(resume_from)
        params = ck.params
        if ck.adam_m is not None and ck.adam_v is not None:
            adam = nn.AdamState(m=ck.adam_m, v=ck.adam_v, step=ck.adam_step)
        kl_beta = ck.kl_beta
        env_steps = ck.env_steps
        iteration = ck.iteration
        best_mean = -math.inf if ck.best_mean_reward is None else ck.best_mean_reward
        if ck.rng_states is not None:
            action_rng = rngmod.restore_state(ck.rng_states["action"])
            shuffle_rng = rngmod.restore_state(ck.rng_states["shuffle"])
        if ck.env_snapshots is not None:
            pool.restore(ck.env_snapshots)
        telemetry = open(telemetry_path, "a", newline="")
        writer = csv.writer(telemetry)

    def make_checkpoint() -> ckptmod.Checkpoint:
        return ckptmod.Checkpoint(
            params=params, env_steps=env_steps, iteration=iteration,
            run_digest=setup.run_digest,
            best_mean_reward=None if best_mean == -math.inf else best_mean,
            adam_m=adam.m, adam_v=adam.v, adam_step=adam.step, kl_beta=kl_beta,
            rng_states={"action": rngmod.capture_state(action_rng),
                        "shuffle": rngmod.capture_state(shuffle_rng)},
            env_snapshots=pool.snapshot(),
        )

    steps_per_iter = cfg.n_steps * cfg.n_envs
    next_periodic = (env_steps // setup.checkpoint_interval_steps + 1) \
        * setup.checkpoint_interval_steps
    best_path = out_dir / "best.ckpt"
    best_success_path = out_dir / "best_success.ckpt"
    final_path = out_dir / "final.ckpt"
    best_successes = -1

    try:
        while env_steps < cfg.total_env_steps and iteration < cfg.max_iterations:
            buf, window = collect_rollout(pool, params, cfg.n_steps, action_rng,
                                          reward_scale=cfg.reward_scale)
            buf.advantages, buf.returns = compute_gae(
                buf.rewards, buf.values, buf.dones, buf.bootstrap,
                cfg.gamma, cfg.lam)
            stats, kl_beta = ppo_update(params, buf, cfg, adam, kl_beta, shuffle_rng)
            iteration += 1
            env_steps += steps_per_iter

            if not math.isfinite(stats.loss):
                (out_dir / "diverged.txt").write_text(
                    f"iteration {iteration}: non-finite loss\n{stats!r}\n")
                raise TrainingDiverged(iteration, stats,
                                       f"non-finite loss at iteration {iteration}")

            mean_reward = window.mean_raw_reward
            writer.writerow([
                iteration, env_steps, repr(mean_reward), window.success,
                window.collision, window.oob, window.timeout,
                repr(window.mean_episode_len), repr(stats.policy_loss),
                repr(stats.value_loss), repr(stats.entropy), repr(stats.mean_kl),
                repr(kl_beta), repr(stats.clip_fraction),
            ])
            telemetry.flush()

            if mean_reward > best_mean:
                best_mean = mean_reward
                ckptmod.save_checkpoint(best_path, make_checkpoint())
            if window.success > best_successes:
                # success spikes are volatile iteration to iteration; keeping
                # the spikiest window gives evaluation a goal-seeking candidate
                best_successes = window.success
                ckptmod.save_checkpoint(best_success_path, make_checkpoint())
            if env_steps >= next_periodic:
                ckptmod.save_checkpoint(out_dir / f"ckpt_{env_steps:010d}.ckpt",
                                        make_checkpoint())
                next_periodic += setup.checkpoint_interval_steps
        ckptmod.save_checkpoint(final_path, make_checkpoint())
    finally:
        telemetry.close()

    return TrainResult(params=params, env_steps=env_steps, iterations=iteration,
                       best_mean_reward=best_mean, telemetry_path=telemetry_path,
                       final_checkpoint=final_path, best_checkpoint=best_path)
