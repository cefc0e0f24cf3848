"""Feedforward actor-critic network and exact analytic gradients of the PPO loss.

Architecture: a shared tanh trunk 12 -> 128 -> 128 -> 64, a linear actor-mean
head (64 -> 2), two free state-independent log-std parameters, and a linear
critic head (64 -> 1). Everything is float64 numpy, and the backward pass is
hand-derived so gradients can be checked against central finite differences.

Canonical parameter ordering (used by flatten/unflatten and checkpoints):
w1 (12,128), b1 (128,), w2 (128,128), b2 (128,), w3 (128,64), b3 (64,),
wa (64,2), ba (2,), log_std (2,), wc (64,1), bc (1,) -- each array row-major.
Weights are stored input-major, so layers compute x @ w + b.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

OBS_DIM = 12
ACTION_DIM = 2
TRUNK = (128, 128, 64)
LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_LOG_2PI = math.log(2.0 * math.pi)

FIELD_SHAPES: tuple[tuple[str, tuple[int, ...]], ...] = (
    ("w1", (OBS_DIM, TRUNK[0])),
    ("b1", (TRUNK[0],)),
    ("w2", (TRUNK[0], TRUNK[1])),
    ("b2", (TRUNK[1],)),
    ("w3", (TRUNK[1], TRUNK[2])),
    ("b3", (TRUNK[2],)),
    ("wa", (TRUNK[2], ACTION_DIM)),
    ("ba", (ACTION_DIM,)),
    ("log_std", (ACTION_DIM,)),
    ("wc", (TRUNK[2], 1)),
    ("bc", (1,)),
)

PARAM_COUNT = sum(int(np.prod(s)) for _, s in FIELD_SHAPES)


@dataclass
class PolicyParams:
    """Network parameters. The same container shape is used for gradients and
    optimizer moments."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    wa: np.ndarray
    ba: np.ndarray
    log_std: np.ndarray
    wc: np.ndarray
    bc: np.ndarray

    @classmethod
    def zeros(cls) -> "PolicyParams":
        return cls(**{name: np.zeros(shape) for name, shape in FIELD_SHAPES})

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{name: getattr(self, name).copy()
                               for name, _ in FIELD_SHAPES})

    def flatten(self) -> np.ndarray:
        return np.concatenate([getattr(self, name).ravel() for name, _ in FIELD_SHAPES])

    @classmethod
    def unflatten(cls, flat: np.ndarray) -> "PolicyParams":
        if flat.shape != (PARAM_COUNT,):
            raise ValueError(f"expected {PARAM_COUNT} parameters, got {flat.shape}")
        out = {}
        pos = 0
        for name, shape in FIELD_SHAPES:
            n = int(np.prod(shape))
            out[name] = flat[pos:pos + n].reshape(shape).copy()
            pos += n
        return cls(**out)


GradientBundle = PolicyParams  # same tree, one value per parameter


def _orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float) -> np.ndarray:
    a = rng.standard_normal((rows, cols))
    transpose = rows < cols
    if transpose:
        a = a.T
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if transpose:
        q = q.T
    return gain * q


def init_policy(rng: np.random.Generator,
                log_std_init: float = 0.0) -> PolicyParams:
    """Orthogonal trunk init (gain sqrt(2)), small actor head (0.01), unit
    critic head, zero biases. Draw order: w1, w2, w3, wa, wc."""
    p = PolicyParams.zeros()
    p.w1 = _orthogonal(rng, OBS_DIM, TRUNK[0], math.sqrt(2.0))
    p.w2 = _orthogonal(rng, TRUNK[0], TRUNK[1], math.sqrt(2.0))
    p.w3 = _orthogonal(rng, TRUNK[1], TRUNK[2], math.sqrt(2.0))
    p.wa = _orthogonal(rng, TRUNK[2], ACTION_DIM, 0.01)
    p.wc = _orthogonal(rng, TRUNK[2], 1, 1.0)
    p.log_std[:] = log_std_init
    return p


def forward(params: PolicyParams, obs: np.ndarray,
            ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(mean, log_std, value) for an (N, 12) batch or a single 12-vector."""
    x = np.asarray(obs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite observation")
    h = np.tanh(x @ params.w1 + params.b1)
    h = np.tanh(h @ params.w2 + params.b2)
    h = np.tanh(h @ params.w3 + params.b3)
    mean = h @ params.wa + params.ba
    value = (h @ params.wc + params.bc)[:, 0]
    if single:
        return mean[0], params.log_std.copy(), float(value[0])
    return mean, params.log_std.copy(), value


def log_prob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density summed over action dims."""
    mean = np.atleast_2d(mean)
    action = np.atleast_2d(action)
    z = (action - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) - 0.5 * ACTION_DIM * _LOG_2PI


def entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std) + 0.5 * ACTION_DIM * (1.0 + _LOG_2PI))


def sample_action(mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator,
                  ) -> tuple[np.ndarray, np.ndarray]:
    """Reparameterized draw: mean + sigma * standard normal, with its log-prob."""
    mean = np.atleast_2d(mean)
    eps = rng.standard_normal(mean.shape)
    action = mean + np.exp(log_std) * eps
    return action, log_prob(mean, log_std, action)


def gaussian_kl(mean_old: np.ndarray, log_std_old: np.ndarray,
                mean_new: np.ndarray, log_std_new: np.ndarray) -> np.ndarray:
    """Closed-form KL(old || new) per sample for diagonal Gaussians."""
    var_old = np.exp(2.0 * log_std_old)
    var_new = np.exp(2.0 * log_std_new)
    per_dim = (log_std_new - log_std_old
               + (var_old + (mean_old - mean_new) ** 2) / (2.0 * var_new) - 0.5)
    return np.sum(per_dim, axis=1)


@dataclass(frozen=True)
class LossSpec:
    objective: str = "clip"  # "clip" or "kl_penalty"
    clip_eps: float = 0.2
    kl_beta: float = 1.0
    critic_coef: float = 4.0
    entropy_coef: float = 0.0005
    bound_coef: float = 1e-4
    bound_margin: float = 1.1


@dataclass(frozen=True)
class Minibatch:
    obs: np.ndarray            # (N, 12), already normalized
    actions: np.ndarray        # (N, 2)
    logp_old: np.ndarray       # (N,)
    advantages: np.ndarray     # (N,)
    value_targets: np.ndarray  # (N,)
    mean_old: np.ndarray       # (N, 2)
    log_std_old: np.ndarray    # (2,)


@dataclass(frozen=True)
class LossStats:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    mean_kl: float
    clip_fraction: float


def _composite(params: PolicyParams, mb: Minibatch, spec: LossSpec):
    """Loss, stats and the cache needed for the backward pass."""
    x = mb.obs
    n = x.shape[0]
    z1 = x @ params.w1 + params.b1
    h1 = np.tanh(z1)
    z2 = h1 @ params.w2 + params.b2
    h2 = np.tanh(z2)
    z3 = h2 @ params.w3 + params.b3
    h3 = np.tanh(z3)
    mean = h3 @ params.wa + params.ba
    value = (h3 @ params.wc + params.bc)[:, 0]

    sigma = np.exp(params.log_std)
    zed = (mb.actions - mean) / sigma
    lp = -0.5 * np.sum(zed * zed, axis=1) - np.sum(params.log_std) \
        - 0.5 * ACTION_DIM * _LOG_2PI
    ratio = np.exp(lp - mb.logp_old)
    adv = mb.advantages
    kl = gaussian_kl(mb.mean_old, mb.log_std_old, mean, params.log_std)

    if spec.objective == "clip":
        s1 = ratio * adv
        s2 = np.clip(ratio, 1.0 - spec.clip_eps, 1.0 + spec.clip_eps) * adv
        obj = np.minimum(s1, s2)
        dobj_dratio = np.where(s1 <= s2, adv, 0.0)
    elif spec.objective == "kl_penalty":
        obj = ratio * adv - spec.kl_beta * kl
        dobj_dratio = adv
    else:
        raise ValueError(f"unknown objective {spec.objective!r}")
    policy_loss = -float(np.mean(obj))

    verr = value - mb.value_targets
    value_loss = 0.5 * float(np.mean(verr * verr))
    ent = entropy(params.log_std)
    over = np.maximum(0.0, np.abs(mean) - spec.bound_margin)
    bound = float(np.mean(np.sum(over * over, axis=1)))

    loss = (policy_loss + spec.critic_coef * value_loss
            - spec.entropy_coef * ent + spec.bound_coef * bound)
    stats = LossStats(
        loss=loss, policy_loss=policy_loss, value_loss=value_loss, entropy=ent,
        mean_kl=float(np.mean(kl)),
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > spec.clip_eps)),
    )
    cache = dict(x=x, n=n, h1=h1, h2=h2, h3=h3, mean=mean, value=value,
                 sigma=sigma, zed=zed, ratio=ratio, dobj_dratio=dobj_dratio,
                 verr=verr, over=over)
    return loss, stats, cache


def ppo_loss(params: PolicyParams, mb: Minibatch, spec: LossSpec,
             ) -> tuple[float, LossStats]:
    loss, stats, _ = _composite(params, mb, spec)
    return loss, stats


def backward(params: PolicyParams, mb: Minibatch, spec: LossSpec,
             ) -> tuple[GradientBundle, LossStats]:
    """Analytic gradient of the composite loss w.r.t. every parameter."""
    if mb.obs.shape[0] == 0:
        raise ValueError("empty minibatch")
    _, stats, c = _composite(params, mb, spec)
    n = c["n"]
    g = PolicyParams.zeros()

    # d loss / d log-prob per sample (through the ratio).
    g_lp = -(c["dobj_dratio"] * c["ratio"]) / n

    # Heads.
    g_mean = g_lp[:, None] * c["zed"] / c["sigma"]
    g.log_std += np.sum(g_lp[:, None] * (c["zed"] ** 2 - 1.0), axis=0)
    if spec.objective == "kl_penalty":
        var_old = np.exp(2.0 * mb.log_std_old)
        var_new = c["sigma"] ** 2
        diff = c["mean"] - mb.mean_old
        g_mean += (spec.kl_beta / n) * diff / var_new
        g.log_std += (spec.kl_beta / n) * np.sum(
            1.0 - (var_old + diff ** 2) / var_new, axis=0)
    g_mean += spec.bound_coef * (2.0 / n) * c["over"] * np.sign(c["mean"])
    g.log_std += -spec.entropy_coef
    g_value = spec.critic_coef * c["verr"] / n

    # Trunk backprop.
    g.wa[:] = c["h3"].T @ g_mean
    g.ba[:] = g_mean.sum(axis=0)
    g.wc[:] = c["h3"].T @ g_value[:, None]
    g.bc[:] = g_value.sum(keepdims=True)
    dh3 = g_mean @ params.wa.T + g_value[:, None] @ params.wc.T
    dz3 = dh3 * (1.0 - c["h3"] ** 2)
    g.w3[:] = c["h2"].T @ dz3
    g.b3[:] = dz3.sum(axis=0)
    dh2 = dz3 @ params.w3.T
    dz2 = dh2 * (1.0 - c["h2"] ** 2)
    g.w2[:] = c["h1"].T @ dz2
    g.b2[:] = dz2.sum(axis=0)
    dh1 = dz2 @ params.w2.T
    dz1 = dh1 * (1.0 - c["h1"] ** 2)
    g.w1[:] = c["x"].T @ dz1
    g.b1[:] = dz1.sum(axis=0)
    return g, stats


@dataclass
class AdamState:
    m: PolicyParams = field(default_factory=PolicyParams.zeros)
    v: PolicyParams = field(default_factory=PolicyParams.zeros)
    step: int = 0


def adam_update(params: PolicyParams, grads: GradientBundle, state: AdamState,
                lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> None:
    """In-place first/second-moment update with bias correction; keeps log_std
    inside [LOG_STD_MIN, LOG_STD_MAX]."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, _ in FIELD_SHAPES:
        p = getattr(params, name)
        gr = getattr(grads, name)
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m *= beta1
        m += (1.0 - beta1) * gr
        v *= beta2
        v += (1.0 - beta2) * gr * gr
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX, out=params.log_std)


OBS_POSITION_SCALE = 15.0
OBS_ANGLE_SCALE = math.pi


def obs_scales(v_max: float) -> np.ndarray:
    return np.array([OBS_POSITION_SCALE, OBS_POSITION_SCALE,
                     OBS_POSITION_SCALE, OBS_POSITION_SCALE,
                     OBS_ANGLE_SCALE, OBS_ANGLE_SCALE,
                     1.0, 1.0, v_max, v_max, v_max, v_max])


def normalize_obs(obs: np.ndarray, v_max: float) -> np.ndarray:
    """Fixed per-field scaling: positions and goal offsets by 15 m, angles by
    pi, filters untouched, wheel speeds by the commanded v_max."""
    return np.asarray(obs, dtype=np.float64) / obs_scales(v_max)
