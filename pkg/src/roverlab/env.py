"""Goal-navigation MDP: episode placement, proximity sensing, rewards, and
termination over a square arena with circular obstacles.

Two domain presets matter in practice: the farm (g=9.81, mu=0.8, tree trunks,
randomized goals) used for training, and the lunar analog (g=1.62, mu=0.45,
rock domes, one fixed goal) used for zero-shot evaluation. Obstacle sensing is
geometric: front and rear 120-degree sectors report an activation that rises
linearly from 0 at 3 m surface distance to 1 at contact.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as rngmod
from . import terrain as terrainmod
from .rover import (BodyCommand, ControlLimits, RoverGeometry, RoverState,
                    step_pose, wrap_angle)

DETECTION_RANGE = 3.0          # avoidance filter range, meters
SECTOR_HALF_ANGLE = math.pi / 3.0  # 120-degree sectors
OBSTACLE_ALERT_LEVEL = 0.5     # filter activation that triggers the obstacle penalty
INSTABILITY_THRESHOLD = 2.0    # wheel speed above which the speed term flips negative
FORWARD_PROGRESS_MIN = 0.075   # goal-distance drop per step that counts as forward
PLACEMENT_CLEARANCE = 1.5      # min center distance obstacle<->{start, goal, obstacle}
PLACEMENT_MAX_ATTEMPTS = 10_000
DEFAULT_EPISODE_MAX_STEPS = 1000

TREE_RADIUS = 0.3
ROCK_RADIUS = 0.5


class PlacementError(RuntimeError):
    """Episode layout constraints could not be satisfied."""


class EnvUsageError(RuntimeError):
    """Environment driven incorrectly (e.g. stepping a terminal episode)."""


class ObstacleKind(str, enum.Enum):
    TREE_CYLINDER = "tree"
    ROCK_DOME = "rock"


class OutcomeKind(str, enum.Enum):
    SUCCESS = "success"
    COLLISION = "collision"
    OUT_OF_BOUNDS = "out_of_bounds"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class DomainConfig:
    gravity: float = 9.81
    friction: float = 0.8
    obstacle_kind: ObstacleKind = ObstacleKind.TREE_CYLINDER
    obstacle_count: int = 10
    obstacle_radius: float = TREE_RADIUS
    arena_size: float = 15.0
    goal_fixed: tuple[float, float] | None = None  # None: randomized per episode
    terrain: terrainmod.TerrainConfig = field(default_factory=terrainmod.TerrainConfig)

    def __post_init__(self):
        if self.gravity <= 0 or self.friction <= 0:
            raise ValueError("gravity and friction must be > 0")
        if self.obstacle_count < 0 or self.arena_size <= 0:
            raise ValueError("obstacle_count must be >= 0 and arena_size > 0")


def farm_domain(terrain: terrainmod.TerrainConfig | None = None, **kw) -> DomainConfig:
    return DomainConfig(gravity=9.81, friction=0.8, obstacle_kind=ObstacleKind.TREE_CYLINDER,
                        obstacle_count=10, obstacle_radius=TREE_RADIUS, arena_size=15.0,
                        goal_fixed=None,
                        terrain=terrain if terrain is not None else terrainmod.TerrainConfig(),
                        **kw)


def lunar_domain(terrain: terrainmod.TerrainConfig | None = None, **kw) -> DomainConfig:
    return DomainConfig(gravity=1.62, friction=0.45, obstacle_kind=ObstacleKind.ROCK_DOME,
                        obstacle_count=10, obstacle_radius=ROCK_RADIUS, arena_size=15.0,
                        goal_fixed=(6.0, 6.0),
                        terrain=terrain if terrain is not None else terrainmod.TerrainConfig(),
                        **kw)


@dataclass(frozen=True)
class Observation:
    """The 12 policy inputs, in vector order."""

    x: float
    y: float
    d_x: float
    d_y: float
    theta: float    # orientation to goal, (-pi, pi]
    beta: float     # heading vs x-axis, (-pi, pi]
    f_front: float
    f_rear: float
    v_w1: float
    v_w2: float
    v_w3: float
    v_w4: float

    def as_vector(self) -> list[float]:
        return [self.x, self.y, self.d_x, self.d_y, self.theta, self.beta,
                self.f_front, self.f_rear, self.v_w1, self.v_w2, self.v_w3, self.v_w4]


OBS_DIM = 12


@dataclass(frozen=True)
class EpisodeOutcome:
    kind: OutcomeKind
    steps: int
    final_distance: float


@dataclass(frozen=True)
class RewardBreakdown:
    r_alive: float
    r_distance: float
    r_angle: float
    r_success: float
    r_reset: float
    r_forward_backward: float
    r_speed: float
    p_obstacle: float

    @property
    def total(self) -> float:
        return (self.r_alive + self.r_distance + self.r_angle + self.r_success
                + self.r_reset + self.r_forward_backward + self.r_speed + self.p_obstacle)


def reward_distance(d: float) -> float:
    """3*(0.8 - tanh(d/15)); 2.4 at the goal, decaying with distance."""
    return 3.0 * (0.8 - math.tanh(d / 15.0))


def reward_angle(theta: float) -> float:
    """0.6*(-0.9 - tanh((theta-1)/0.1)); ~+0.06 when facing the goal, ~-1.14 away."""
    return 0.6 * (-0.9 - math.tanh((theta - 1.0) / 0.1))


def scan_obstacles(x: float, y: float, heading: float,
                   obstacles: list[tuple[float, float]], obstacle_radius: float,
                   ) -> tuple[float, float, float]:
    """One pass over the obstacle set.

    Returns (front activation, rear activation, min center distance). Sector
    membership uses the bearing of the obstacle center; activation uses the
    nearest surface distance inside the sector, max(0, 1 - d/range).
    """
    min_center = math.inf
    d_front = math.inf
    d_rear = math.inf
    for ox, oy in obstacles:
        dx = ox - x
        dy = oy - y
        dist = math.hypot(dx, dy)
        if dist < min_center:
            min_center = dist
        surf = dist - obstacle_radius
        if surf >= DETECTION_RANGE:
            continue
        rel = wrap_angle(math.atan2(dy, dx) - heading)
        if abs(rel) <= SECTOR_HALF_ANGLE:
            if surf < d_front:
                d_front = surf
        elif abs(wrap_angle(rel - math.pi)) <= SECTOR_HALF_ANGLE:
            if surf < d_rear:
                d_rear = surf
    f_front = max(0.0, 1.0 - max(d_front, 0.0) / DETECTION_RANGE) if d_front < math.inf else 0.0
    f_rear = max(0.0, 1.0 - max(d_rear, 0.0) / DETECTION_RANGE) if d_rear < math.inf else 0.0
    return f_front, f_rear, min_center


def avoidance_filter(state: RoverState, obstacles: list[tuple[float, float]],
                     obstacle_radius: float, sector: str) -> float:
    """Activation in [0, 1] for the 'front' or 'rear' 120-degree sector."""
    f_front, f_rear, _ = scan_obstacles(state.x, state.y, state.heading,
                                        obstacles, obstacle_radius)
    if sector == "front":
        return f_front
    if sector == "rear":
        return f_rear
    raise ValueError(f"unknown sector {sector!r}")


def compute_observation(state: RoverState, goal: tuple[float, float],
                        obstacles: list[tuple[float, float]],
                        obstacle_radius: float) -> Observation:
    f_front, f_rear, _ = scan_obstacles(state.x, state.y, state.heading,
                                        obstacles, obstacle_radius)
    return _observation(state, goal, f_front, f_rear)


def _observation(state: RoverState, goal: tuple[float, float],
                 f_front: float, f_rear: float) -> Observation:
    d_x = goal[0] - state.x
    d_y = goal[1] - state.y
    theta = wrap_angle(math.atan2(d_y, d_x) - state.heading)
    w = state.wheel_speeds
    return Observation(x=state.x, y=state.y, d_x=d_x, d_y=d_y, theta=theta,
                       beta=state.heading, f_front=f_front, f_rear=f_rear,
                       v_w1=w[0], v_w2=w[1], v_w3=w[2], v_w4=w[3])


def compute_reward(prev: RoverState, cur: RoverState, obs: Observation,
                   outcome: EpisodeOutcome | None,
                   goal: tuple[float, float]) -> RewardBreakdown:
    """Per-step reward. Dense terms apply on every step; r_alive only while the
    episode keeps running; the success bonus and the signed reset term fire on
    the terminal step."""
    terminal = outcome is not None
    d_cur = math.hypot(obs.d_x, obs.d_y)
    d_prev = math.hypot(goal[0] - prev.x, goal[1] - prev.y)

    r_alive = 0.0 if terminal else 1.0
    r_dist = reward_distance(d_cur)
    r_ang = reward_angle(abs(obs.theta))

    r_success = 0.0
    r_reset = 0.0
    if terminal:
        if outcome.kind is OutcomeKind.SUCCESS:
            r_success = 20.0
            r_reset = 2.0
        else:
            r_reset = -2.0

    # forward means real progress: at least half the maximum per-step
    # displacement, so jitter around a fixed spot collects nothing
    fwd = 0.6 if d_prev - d_cur >= FORWARD_PROGRESS_MIN else 0.0
    detected = obs.f_front > 0.0 or obs.f_rear > 0.0
    v_body = (cur.wheel_speeds[0] + cur.wheel_speeds[1]) / 2.0
    back = 0.0
    if v_body < 0.0:
        back = 0.3 if detected else -0.3

    stable = all(abs(w) <= INSTABILITY_THRESHOLD for w in cur.wheel_speeds)
    r_speed = 0.6 if stable else -0.6

    p_obstacle = -1.0 if max(obs.f_front, obs.f_rear) > OBSTACLE_ALERT_LEVEL else 0.0

    return RewardBreakdown(r_alive=r_alive, r_distance=r_dist, r_angle=r_ang,
                           r_success=r_success, r_reset=r_reset,
                           r_forward_backward=fwd + back, r_speed=r_speed,
                           p_obstacle=p_obstacle)


def check_termination(state: RoverState, goal: tuple[float, float],
                      obstacles: list[tuple[float, float]], obstacle_radius: float,
                      step_count: int, geometry: RoverGeometry, arena_size: float,
                      max_steps: int,
                      min_center_dist: float | None = None) -> EpisodeOutcome | None:
    """Priority: success > collision > out-of-bounds > timeout."""
    d_goal = math.hypot(goal[0] - state.x, goal[1] - state.y)
    if d_goal <= geometry.goal_radius:
        return EpisodeOutcome(OutcomeKind.SUCCESS, step_count, d_goal)
    if min_center_dist is None:
        min_center_dist = math.inf
        for ox, oy in obstacles:
            min_center_dist = min(min_center_dist, math.hypot(ox - state.x, oy - state.y))
    if min_center_dist <= geometry.footprint_radius + obstacle_radius:
        return EpisodeOutcome(OutcomeKind.COLLISION, step_count, d_goal)
    half = arena_size / 2.0
    if state.out_of_bounds or abs(state.x) > half or abs(state.y) > half:
        return EpisodeOutcome(OutcomeKind.OUT_OF_BOUNDS, step_count, d_goal)
    if step_count >= max_steps:
        return EpisodeOutcome(OutcomeKind.TIMEOUT, step_count, d_goal)
    return None


def place_episode(domain: DomainConfig, rng: np.random.Generator,
                  ) -> tuple[tuple[float, float, float], tuple[float, float],
                             list[tuple[float, float]]]:
    """Sample (start pose, goal, obstacles) by rejection.

    Start and goal are uniform in the arena conditioned on mutual distance of
    at least half the arena diagonal (in fixed-goal mode only the start is
    drawn); obstacles are uniform with PLACEMENT_CLEARANCE center distance to
    the start, the goal, and each other.
    """
    half = domain.arena_size / 2.0
    min_sep = domain.arena_size * math.sqrt(2.0) / 2.0

    def uni() -> float:
        return float(rng.uniform(-half, half))

    start = goal = None
    for _ in range(PLACEMENT_MAX_ATTEMPTS):
        sx, sy = uni(), uni()
        heading = wrap_angle(float(rng.uniform(-math.pi, math.pi)))
        if domain.goal_fixed is not None:
            gx, gy = domain.goal_fixed
        else:
            gx, gy = uni(), uni()
        if math.hypot(gx - sx, gy - sy) >= min_sep:
            start = (sx, sy, heading)
            goal = (gx, gy)
            break
    if start is None:
        raise PlacementError(
            f"no start/goal pair at separation >= {min_sep:.3f} m "
            f"after {PLACEMENT_MAX_ATTEMPTS} attempts")

    obstacles: list[tuple[float, float]] = []
    for k in range(domain.obstacle_count):
        placed = False
        for _ in range(PLACEMENT_MAX_ATTEMPTS):
            ox, oy = uni(), uni()
            if math.hypot(ox - start[0], oy - start[1]) < PLACEMENT_CLEARANCE:
                continue
            if math.hypot(ox - goal[0], oy - goal[1]) < PLACEMENT_CLEARANCE:
                continue
            if any(math.hypot(ox - px, oy - py) < PLACEMENT_CLEARANCE
                   for px, py in obstacles):
                continue
            obstacles.append((ox, oy))
            placed = True
            break
        if not placed:
            raise PlacementError(
                f"could not place obstacle {k + 1}/{domain.obstacle_count} with "
                f"{PLACEMENT_CLEARANCE} m clearance after {PLACEMENT_MAX_ATTEMPTS} attempts")
    return start, goal, obstacles


class NavigationEnv:
    """One independently-owned mutable environment instance.

    Holds its own RNG stream; instances may be stepped in parallel since they
    share nothing mutable (the heightfield is read-only).
    """

    def __init__(self, domain: DomainConfig, geometry: RoverGeometry,
                 limits: ControlLimits, heightfield: terrainmod.Heightfield,
                 rng: np.random.Generator,
                 max_episode_steps: int = DEFAULT_EPISODE_MAX_STEPS):
        self.domain = domain
        self.geometry = geometry
        self.limits = limits
        self.heightfield = heightfield
        self.rng = rng
        self.max_episode_steps = max_episode_steps
        self.state: RoverState | None = None
        self.goal: tuple[float, float] = (0.0, 0.0)
        self.obstacles: list[tuple[float, float]] = []
        self.step_count = 0
        self.needs_reset = True

    def reset(self) -> Observation:
        start, goal, obstacles = place_episode(self.domain, self.rng)
        sx, sy, heading = start
        z = terrainmod.height_at(self.heightfield, sx, sy) \
            if self.heightfield.contains(sx, sy) else 0.0
        self.state = RoverState(x=sx, y=sy, z=z, heading=heading)
        self.goal = goal
        self.obstacles = obstacles
        self.step_count = 0
        self.needs_reset = False
        return compute_observation(self.state, self.goal, self.obstacles,
                                   self.domain.obstacle_radius)

    def step(self, cmd: BodyCommand) -> tuple[Observation, RewardBreakdown,
                                              EpisodeOutcome | None]:
        if self.needs_reset or self.state is None:
            raise EnvUsageError("step() called on a terminal episode; reset() first")
        cmd = cmd.clamped(self.limits)
        prev = self.state
        cur = step_pose(prev, cmd, self.domain.gravity, self.domain.friction,
                        self.heightfield, self.limits.dt, self.geometry.track_width)
        self.state = cur
        self.step_count += 1

        f_front, f_rear, min_center = scan_obstacles(
            cur.x, cur.y, cur.heading, self.obstacles, self.domain.obstacle_radius)
        outcome = check_termination(cur, self.goal, self.obstacles,
                                    self.domain.obstacle_radius, self.step_count,
                                    self.geometry, self.domain.arena_size,
                                    self.max_episode_steps, min_center_dist=min_center)
        obs = _observation(cur, self.goal, f_front, f_rear)
        breakdown = compute_reward(prev, cur, obs, outcome, self.goal)
        if outcome is not None:
            self.needs_reset = True
        return obs, breakdown, outcome

    def snapshot(self) -> dict:
        """Resumable episode state (used by training checkpoints)."""
        s = self.state
        return {
            "state": None if s is None else [s.x, s.y, s.z, s.heading,
                                             list(s.wheel_speeds), s.out_of_bounds],
            "goal": list(self.goal),
            "obstacles": [list(o) for o in self.obstacles],
            "step_count": self.step_count,
            "needs_reset": self.needs_reset,
            "rng": rngmod.capture_state(self.rng),
        }

    def restore(self, snap: dict) -> None:
        if snap["state"] is None:
            self.state = None
        else:
            x, y, z, heading, wheels, oob = snap["state"]
            self.state = RoverState(x=x, y=y, z=z, heading=heading,
                                    wheel_speeds=tuple(wheels), out_of_bounds=oob)
        self.goal = tuple(snap["goal"])
        self.obstacles = [tuple(o) for o in snap["obstacles"]]
        self.step_count = snap["step_count"]
        self.needs_reset = snap["needs_reset"]
        self.rng = rngmod.restore_state(snap["rng"])

    def observation(self) -> Observation:
        if self.state is None:
            raise EnvUsageError("environment not reset yet")
        return compute_observation(self.state, self.goal, self.obstacles,
                                   self.domain.obstacle_radius)
