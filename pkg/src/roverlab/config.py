"""Run configuration: a strict TOML-subset file format, presets, and digests.

The accepted syntax is the familiar key/table form::

    master_seed = 0
    profile = "desk"              # "desk" or "paper" PPO preset

    [domain.farm]
    g = 9.81
    mu = 0.8
    obstacle = "tree"
    goal = "randomized"

    [domain.lunar]
    g = 1.62
    mu = 0.45
    obstacle = "rock"
    goal = "fixed(6.0,6.0)"

    [[terrain.sub_terrains]]
    proportion = 0.5
    ...

Values are quoted strings, integers, floats, booleans, or flat arrays of
those. Unknown keys are rejected with the offending line number; profile
presets expand before per-key overrides apply. emit_config() renders a
resolved config back to this format so every run artifact can embed a
snapshot that reproduces the run, and run_digest() hashes that snapshot.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field, replace

from . import ppo as ppomod
from . import terrain as terrainmod
from .env import DomainConfig, ObstacleKind, TREE_RADIUS, ROCK_RADIUS
from .rover import ControlLimits, RoverGeometry

PROFILES = ("desk", "paper")


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "", line: int | None = None):
        loc = f"{source or 'config'}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}")
        self.source = source
        self.line = line


# ---------------------------------------------------------------------------
# Parsing


_KEY_RE = re.compile(r"[A-Za-z0-9_-]+")
_INT_RE = re.compile(r"[+-]?\d+$")
_FIXED_GOAL_RE = re.compile(r"fixed\(\s*([^,\s]+)\s*,\s*([^)\s]+)\s*\)$")


def _strip_comment(line: str) -> str:
    out = []
    in_str = False
    for ch in line:
        if ch == '"':
            in_str = not in_str
        elif ch == "#" and not in_str:
            break
        out.append(ch)
    return "".join(out).strip()


def _parse_scalar(text: str, source: str, lineno: int):
    text = text.strip()
    if text.startswith('"'):
        if len(text) < 2 or not text.endswith('"'):
            raise ConfigError(f"unterminated string {text!r}", source, lineno)
        return text[1:-1]
    if text == "true":
        return True
    if text == "false":
        return False
    if _INT_RE.match(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"cannot parse value {text!r}", source, lineno) from None


def _parse_value(text: str, source: str, lineno: int):
    text = text.strip()
    if text.startswith("["):
        if not text.endswith("]"):
            raise ConfigError(f"unterminated array {text!r}", source, lineno)
        inner = text[1:-1].strip()
        if not inner:
            return []
        return [_parse_scalar(part, source, lineno) for part in inner.split(",")]
    return _parse_scalar(text, source, lineno)


def parse_config_text(text: str, source: str = "config",
                      ) -> tuple[dict, dict[str, int]]:
    """Parse the TOML subset into nested dicts plus a key-path -> line map."""
    root: dict = {}
    lines: dict[str, int] = {}
    table: dict = root
    prefix = ""

    def descend(path: list[str], lineno: int) -> dict:
        node = root
        for part in path:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"{'.'.join(path)} conflicts with an existing value",
                                  source, lineno)
            node = nxt
        return node

    for lineno, raw in enumerate(text.splitlines(), 1):
        line = _strip_comment(raw)
        if not line:
            continue
        if line.startswith("[["):
            if not line.endswith("]]"):
                raise ConfigError(f"malformed table header {line!r}", source, lineno)
            path = line[2:-2].strip().split(".")
            parent = descend(path[:-1], lineno)
            arr = parent.setdefault(path[-1], [])
            if not isinstance(arr, list):
                raise ConfigError(f"{'.'.join(path)} is not an array of tables",
                                  source, lineno)
            table = {}
            arr.append(table)
            prefix = ".".join(path) + f"#{len(arr) - 1}."
        elif line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed table header {line!r}", source, lineno)
            path = line[1:-1].strip().split(".")
            if not all(_KEY_RE.fullmatch(p) for p in path):
                raise ConfigError(f"invalid table name {line!r}", source, lineno)
            table = descend(path, lineno)
            prefix = ".".join(path) + "."
            lines.setdefault(".".join(path), lineno)
        else:
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or not _KEY_RE.fullmatch(key):
                raise ConfigError(f"expected 'key = value', got {line!r}", source, lineno)
            if key in table:
                raise ConfigError(f"duplicate key {prefix}{key}", source, lineno)
            table[key] = _parse_value(value, source, lineno)
            lines[prefix + key] = lineno
    return root, lines


# ---------------------------------------------------------------------------
# Resolution


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 0
    profile: str = "desk"
    output_dir: str = "runs/run"
    checkpoint_interval_steps: int = 200_000
    episode_max_steps: int = 1000
    terrain: terrainmod.TerrainConfig = field(default_factory=terrainmod.TerrainConfig)
    domains: dict = field(default_factory=dict)
    ppo: ppomod.PpoConfig = field(default_factory=ppomod.PpoConfig)
    geometry: RoverGeometry = field(default_factory=RoverGeometry)
    limits: ControlLimits = field(default_factory=ControlLimits)


def default_run_config(profile: str = "desk", master_seed: int = 0) -> RunConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}, expected one of {PROFILES}")
    terrain = terrainmod.TerrainConfig()
    ppo_cfg = ppomod.desk_config() if profile == "desk" else ppomod.paper_config()
    from .env import farm_domain, lunar_domain
    return RunConfig(
        master_seed=master_seed,
        profile=profile,
        terrain=terrain,
        domains={"farm": farm_domain(terrain), "lunar": lunar_domain(terrain)},
        ppo=ppo_cfg,
    )


class _Section:
    """One parsed table with checked typed access; leftover keys are errors."""

    def __init__(self, data: dict, path: str, lines: dict[str, int], source: str):
        self.data = dict(data)
        self.path = path
        self.lines = lines
        self.source = source

    def _line(self, key: str) -> int | None:
        return self.lines.get(f"{self.path}{key}")

    def take(self, key: str, kind, default):
        if key not in self.data:
            return default
        value = self.data.pop(key)
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
            raise ConfigError(f"{self.path}{key}: expected {kind.__name__}, "
                              f"got {value!r}", self.source, self._line(key))
        return value

    def finish(self) -> None:
        for key in self.data:
            raise ConfigError(f"unknown key '{self.path}{key}'", self.source,
                              self._line(key))


def _resolve_goal(text: str, path: str, source: str,
                  line: int | None) -> tuple[float, float] | None:
    if text == "randomized":
        return None
    m = _FIXED_GOAL_RE.match(text)
    if not m:
        raise ConfigError(f"{path}: goal must be \"randomized\" or \"fixed(x,y)\", "
                          f"got {text!r}", source, line)
    try:
        return (float(m.group(1)), float(m.group(2)))
    except ValueError:
        raise ConfigError(f"{path}: bad fixed goal coordinates {text!r}",
                          source, line) from None


def _resolve_terrain(data: dict, lines: dict, source: str,
                     default: terrainmod.TerrainConfig) -> terrainmod.TerrainConfig:
    sec = _Section(data, "terrain.", lines, source)
    subs_raw = sec.data.pop("sub_terrains", None)
    cfg = replace(
        default,
        vertical_scale=sec.take("vertical_scale", float, default.vertical_scale),
        horizontal_scale=sec.take("horizontal_scale", float, default.horizontal_scale),
        slope_threshold=sec.take("slope_threshold", float, default.slope_threshold),
        size_x=sec.take("size_x", float, default.size_x),
        size_y=sec.take("size_y", float, default.size_y),
        seed=sec.take("seed", int, default.seed),
    )
    sec.finish()
    if subs_raw is not None:
        subs = []
        for i, item in enumerate(subs_raw):
            ssec = _Section(item, f"terrain.sub_terrains#{i}.", lines, source)
            subs.append(terrainmod.SubTerrainConfig(
                proportion=ssec.take("proportion", float, 0.5),
                noise_min=ssec.take("noise_min", float, 0.03),
                noise_max=ssec.take("noise_max", float, 0.07),
                noise_step=ssec.take("noise_step", float, 0.01),
                border_width=ssec.take("border_width", float, 0.01),
            ))
            ssec.finish()
        cfg = replace(cfg, sub_terrains=tuple(subs))
    return cfg


def _resolve_domain(name: str, data: dict, lines: dict, source: str,
                    terrain: terrainmod.TerrainConfig) -> DomainConfig:
    from .env import farm_domain, lunar_domain
    base = lunar_domain(terrain) if name == "lunar" else farm_domain(terrain)
    sec = _Section(data, f"domain.{name}.", lines, source)
    kind_text = sec.take("obstacle", str, base.obstacle_kind.value)
    try:
        kind = ObstacleKind(kind_text)
    except ValueError:
        raise ConfigError(f"domain.{name}.obstacle: unknown kind {kind_text!r} "
                          f"(expected 'tree' or 'rock')", source,
                          sec._line("obstacle")) from None
    default_radius = base.obstacle_radius if kind == base.obstacle_kind else (
        TREE_RADIUS if kind is ObstacleKind.TREE_CYLINDER else ROCK_RADIUS)
    goal_text = sec.take("goal", str, None)
    goal = base.goal_fixed if goal_text is None else _resolve_goal(
        goal_text, f"domain.{name}.goal", source, sec._line("goal"))
    domain = DomainConfig(
        gravity=sec.take("g", float, base.gravity),
        friction=sec.take("mu", float, base.friction),
        obstacle_kind=kind,
        obstacle_count=sec.take("obstacle_count", int, base.obstacle_count),
        obstacle_radius=sec.take("obstacle_radius", float, default_radius),
        arena_size=sec.take("arena_size", float, base.arena_size),
        goal_fixed=goal,
        terrain=terrain,
    )
    sec.finish()
    return domain


def resolve_run_config(data: dict, lines: dict, source: str = "config") -> RunConfig:
    top = _Section({k: v for k, v in data.items()
                    if not isinstance(v, (dict, list))}, "", lines, source)
    profile = top.take("profile", str, "desk")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}, expected one of {PROFILES}",
                          source, lines.get("profile"))
    base = default_run_config(profile)

    master_seed = top.take("master_seed", int, base.master_seed)
    output_dir = top.take("output_dir", str, base.output_dir)
    interval = top.take("checkpoint_interval_steps", int, base.checkpoint_interval_steps)
    episode_max = top.take("episode_max_steps", int, base.episode_max_steps)
    top.finish()

    tables = {k: v for k, v in data.items() if isinstance(v, (dict, list))}
    known_tables = {"terrain", "rover", "domain", "ppo"}
    for key in tables:
        if key not in known_tables:
            raise ConfigError(f"unknown table [{key}]", source, lines.get(key))

    terrain = _resolve_terrain(dict(tables.get("terrain", {})), lines, source,
                               base.terrain)
    try:
        terrain.validate()
    except terrainmod.TerrainConfigError as exc:
        raise ConfigError(f"terrain: {exc}", source) from exc

    rov = _Section(dict(tables.get("rover", {})), "rover.", lines, source)
    geometry = RoverGeometry(
        length=rov.take("length", float, base.geometry.length),
        width=rov.take("width", float, base.geometry.width),
        height=rov.take("height", float, base.geometry.height),
        track_width=rov.take("track_width", float, base.geometry.track_width),
        goal_radius=rov.take("goal_radius", float, base.geometry.goal_radius),
    )
    limits = ControlLimits(
        v_max=rov.take("v_max", float, base.limits.v_max),
        omega_max=rov.take("omega_max", float, base.limits.omega_max),
        dt=rov.take("dt", float, base.limits.dt),
    )
    rov.finish()

    domains = {name: replace(cfg, terrain=terrain)
               for name, cfg in default_run_config(profile).domains.items()}
    for name, body in dict(tables.get("domain", {})).items():
        if not isinstance(body, dict):
            raise ConfigError(f"[domain.{name}] must be a table", source)
        domains[name] = _resolve_domain(name, dict(body), lines, source, terrain)

    psec = _Section(dict(tables.get("ppo", {})), "ppo.", lines, source)
    pbase = base.ppo
    ppo_cfg = ppomod.PpoConfig(
        gamma=psec.take("gamma", float, pbase.gamma),
        lam=psec.take("lam", float, pbase.lam),
        lr=psec.take("lr", float, pbase.lr),
        clip_eps=psec.take("clip_eps", float, pbase.clip_eps),
        kl_target=psec.take("kl_target", float, pbase.kl_target),
        n_steps=psec.take("n_steps", int, pbase.n_steps),
        n_envs=psec.take("n_envs", int, pbase.n_envs),
        minibatch_size=psec.take("minibatch_size", int, pbase.minibatch_size),
        mini_epochs=psec.take("mini_epochs", int, pbase.mini_epochs),
        max_iterations=psec.take("max_iterations", int, pbase.max_iterations),
        critic_coef=psec.take("critic_coef", float, pbase.critic_coef),
        entropy_coef=psec.take("entropy_coef", float, pbase.entropy_coef),
        bound_coef=psec.take("bound_coef", float, pbase.bound_coef),
        total_env_steps=psec.take("total_env_steps", int, pbase.total_env_steps),
        objective=psec.take("objective", str, pbase.objective),
        reward_scale=psec.take("reward_scale", float, pbase.reward_scale),
        log_std_init=psec.take("log_std_init", float, pbase.log_std_init),
    )
    psec.finish()
    try:
        ppo_cfg.validate()
    except ValueError as exc:
        raise ConfigError(f"ppo: {exc}", source) from exc

    return RunConfig(master_seed=master_seed, profile=profile, output_dir=output_dir,
                     checkpoint_interval_steps=interval, episode_max_steps=episode_max,
                     terrain=terrain, domains=domains, ppo=ppo_cfg,
                     geometry=geometry, limits=limits)


def load_run_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fp:
            text = fp.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", str(path)) from exc
    data, lines = parse_config_text(text, source=str(path))
    return resolve_run_config(data, lines, source=str(path))


# ---------------------------------------------------------------------------
# Emission


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    return f'"{value}"'


def emit_config(run: RunConfig) -> str:
    """Canonical, loadable snapshot of a resolved config."""
    out = []
    out.append(f"master_seed = {run.master_seed}")
    out.append(f'profile = "{run.profile}"')
    out.append(f'output_dir = "{run.output_dir}"')
    out.append(f"checkpoint_interval_steps = {run.checkpoint_interval_steps}")
    out.append(f"episode_max_steps = {run.episode_max_steps}")
    t = run.terrain
    out.append("\n[terrain]")
    for key in ("vertical_scale", "horizontal_scale", "slope_threshold",
                "size_x", "size_y", "seed"):
        out.append(f"{key} = {_fmt(getattr(t, key))}")
    for sub in t.sub_terrains:
        out.append("\n[[terrain.sub_terrains]]")
        for key in ("proportion", "noise_min", "noise_max", "noise_step",
                    "border_width"):
            out.append(f"{key} = {_fmt(getattr(sub, key))}")
    g, lim = run.geometry, run.limits
    out.append("\n[rover]")
    for key in ("length", "width", "height", "track_width", "goal_radius"):
        out.append(f"{key} = {_fmt(getattr(g, key))}")
    for key in ("v_max", "omega_max", "dt"):
        out.append(f"{key} = {_fmt(getattr(lim, key))}")
    for name in sorted(run.domains):
        d = run.domains[name]
        out.append(f"\n[domain.{name}]")
        out.append(f"g = {_fmt(d.gravity)}")
        out.append(f"mu = {_fmt(d.friction)}")
        out.append(f'obstacle = "{d.obstacle_kind.value}"')
        out.append(f"obstacle_count = {d.obstacle_count}")
        out.append(f"obstacle_radius = {_fmt(d.obstacle_radius)}")
        out.append(f"arena_size = {_fmt(d.arena_size)}")
        if d.goal_fixed is None:
            out.append('goal = "randomized"')
        else:
            out.append(f'goal = "fixed({d.goal_fixed[0]!r},{d.goal_fixed[1]!r})"')
    p = run.ppo
    out.append("\n[ppo]")
    for key in ("gamma", "lam", "lr", "clip_eps", "kl_target", "n_steps", "n_envs",
                "minibatch_size", "mini_epochs", "max_iterations", "critic_coef",
                "entropy_coef", "bound_coef", "total_env_steps", "objective",
                "reward_scale", "log_std_init"):
        out.append(f"{key} = {_fmt(getattr(p, key))}")
    return "\n".join(out) + "\n"


def run_digest(run: RunConfig) -> str:
    return hashlib.sha256(emit_config(run).encode("utf-8")).hexdigest()
