"""Versioned text checkpoints: a structured header followed by base64 payloads.

Layout (one field per line, fixed order):

    roverlab-checkpoint
    format_version: 1
    created_at: <iso-8601 utc>
    run_digest: <64 hex chars or ->
    env_steps: <int>
    iteration: <int>
    best_mean_reward: <float repr or ->
    adam_step: <int>
    kl_beta: <float repr>
    shapes: w1:12x128 b1:128 ... (canonical parameter order)
    params: <base64 of little-endian float64, canonical order>
    adam_m: <base64 or ->
    adam_v: <base64 or ->
    rng_states: <one-line json or ->
    env_snapshots: <one-line json or ->

Parameters (and moments, when present) round-trip bitwise. rng_states and
env_snapshots carry everything needed to resume training identically.
"""

from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from . import nn

MAGIC = "roverlab-checkpoint"
FORMAT_VERSION = 1

_FIELDS = ("format_version", "created_at", "run_digest", "env_steps", "iteration",
           "best_mean_reward", "adam_step", "kl_beta", "shapes", "params",
           "adam_m", "adam_v", "rng_states", "env_snapshots")


class CheckpointError(ValueError):
    """Base class for unreadable or inconsistent checkpoints."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointPayloadError(CheckpointError):
    pass


def canonical_shapes() -> str:
    return " ".join(f"{name}:{'x'.join(str(d) for d in shape)}"
                    for name, shape in nn.FIELD_SHAPES)


@dataclass
class Checkpoint:
    params: nn.PolicyParams
    env_steps: int = 0
    iteration: int = 0
    run_digest: str = "-"
    best_mean_reward: float | None = None
    adam_m: nn.PolicyParams | None = None
    adam_v: nn.PolicyParams | None = None
    adam_step: int = 0
    kl_beta: float = 1.0
    rng_states: dict | None = None
    env_snapshots: list | None = None
    created_at: str = ""
    format_version: int = FORMAT_VERSION


def _encode(arr: np.ndarray) -> str:
    return base64.b64encode(arr.astype("<f8").tobytes()).decode("ascii")


def _decode(text: str, expected: int, what: str) -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except Exception as exc:
        raise CheckpointPayloadError(f"{what}: invalid base64 payload: {exc}") from exc
    if len(raw) != expected * 8:
        raise CheckpointPayloadError(
            f"{what}: payload holds {len(raw)} bytes, expected {expected * 8} "
            f"({expected} float64 values)")
    return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    created = ckpt.created_at or datetime.now(timezone.utc).isoformat()
    lines = [
        MAGIC,
        f"format_version: {ckpt.format_version}",
        f"created_at: {created}",
        f"run_digest: {ckpt.run_digest or '-'}",
        f"env_steps: {ckpt.env_steps}",
        f"iteration: {ckpt.iteration}",
        "best_mean_reward: " + ("-" if ckpt.best_mean_reward is None
                                else repr(float(ckpt.best_mean_reward))),
        f"adam_step: {ckpt.adam_step}",
        f"kl_beta: {ckpt.kl_beta!r}",
        f"shapes: {canonical_shapes()}",
        f"params: {_encode(ckpt.params.flatten())}",
        "adam_m: " + ("-" if ckpt.adam_m is None else _encode(ckpt.adam_m.flatten())),
        "adam_v: " + ("-" if ckpt.adam_v is None else _encode(ckpt.adam_v.flatten())),
        "rng_states: " + ("-" if ckpt.rng_states is None
                          else json.dumps(ckpt.rng_states, separators=(",", ":"))),
        "env_snapshots: " + ("-" if ckpt.env_snapshots is None
                             else json.dumps(ckpt.env_snapshots, separators=(",", ":"))),
    ]
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="ascii") as fp:
        fp.write("\n".join(lines) + "\n")
    import os
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "r", encoding="ascii") as fp:
        lines = fp.read().splitlines()
    if not lines or lines[0] != MAGIC:
        raise CheckpointError(f"{path}: not a {MAGIC} file")
    fields: dict[str, str] = {}
    for ln in lines[1:]:
        if not ln.strip():
            continue
        key, sep, value = ln.partition(": ")
        if not sep and ln.endswith(":"):
            key, value = ln[:-1], ""
        if key not in _FIELDS:
            raise CheckpointError(f"{path}: unexpected field {key!r}")
        fields[key] = value
    missing = [f for f in _FIELDS if f not in fields]
    if missing:
        raise CheckpointError(f"{path}: missing fields {missing}")

    version = int(fields["format_version"])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format_version {version}, this build reads "
            f"{FORMAT_VERSION}")
    digest = fields["run_digest"]
    if digest != "-" and not re.fullmatch(r"[0-9a-f]{64}", digest):
        raise CheckpointError(f"{path}: run_digest is not 64 hex chars: {digest!r}")
    if fields["shapes"] != canonical_shapes():
        raise CheckpointShapeError(
            f"{path}: parameter shapes {fields['shapes']!r} do not match this "
            f"build's network {canonical_shapes()!r}")

    params = nn.PolicyParams.unflatten(_decode(fields["params"], nn.PARAM_COUNT, "params"))

    def opt(name: str) -> nn.PolicyParams | None:
        if fields[name] == "-":
            return None
        return nn.PolicyParams.unflatten(_decode(fields[name], nn.PARAM_COUNT, name))

    best = fields["best_mean_reward"]
    return Checkpoint(
        params=params,
        env_steps=int(fields["env_steps"]),
        iteration=int(fields["iteration"]),
        run_digest=digest,
        best_mean_reward=None if best == "-" else float(best),
        adam_m=opt("adam_m"),
        adam_v=opt("adam_v"),
        adam_step=int(fields["adam_step"]),
        kl_beta=float(fields["kl_beta"]),
        rng_states=None if fields["rng_states"] == "-" else json.loads(fields["rng_states"]),
        env_snapshots=(None if fields["env_snapshots"] == "-"
                       else json.loads(fields["env_snapshots"])),
        created_at=fields["created_at"],
        format_version=version,
    )
