"""Skid-steer differential-drive kinematics with traction-limited wheel tracking.

The base model is kinematic: commanded body twist maps to left/right wheel
speed targets, each wheel's actual speed slews toward its target at most
mu*g per second (the single physics effect of gravity and friction), and the
realized twist from the actual wheel speeds integrates the planar pose. The
body's z simply follows the terrain under its center; attitude is not modeled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import terrain as terrainmod

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]. Values already in range pass through unchanged."""
    if -math.pi < a <= math.pi:
        return a
    return math.pi - (math.pi - a) % TWO_PI


@dataclass(frozen=True)
class RoverGeometry:
    length: float = 1.89
    width: float = 1.12
    height: float = 0.77
    track_width: float = 0.95
    goal_radius: float = 0.5

    def __post_init__(self):
        if min(self.length, self.width, self.height, self.track_width, self.goal_radius) <= 0:
            raise ValueError("all rover dimensions must be > 0")
        if self.track_width >= self.width:
            raise ValueError("track_width must be smaller than the body width")

    @property
    def footprint_radius(self) -> float:
        return self.width / 2.0


@dataclass(frozen=True)
class ControlLimits:
    v_max: float = 1.5
    omega_max: float = 1.5
    dt: float = 0.1


@dataclass(frozen=True)
class BodyCommand:
    v: float
    omega: float

    def clamped(self, limits: ControlLimits) -> "BodyCommand":
        return BodyCommand(
            v=min(max(self.v, -limits.v_max), limits.v_max),
            omega=min(max(self.omega, -limits.omega_max), limits.omega_max),
        )


@dataclass(frozen=True)
class RoverState:
    """Planar pose plus per-wheel speeds (front-left, front-right, rear-left,
    rear-right). Skid-steer pairing keeps v_w1 == v_w3 and v_w2 == v_w4."""

    x: float
    y: float
    z: float
    heading: float
    wheel_speeds: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    out_of_bounds: bool = False

    @property
    def left_speed(self) -> float:
        return self.wheel_speeds[0]

    @property
    def right_speed(self) -> float:
        return self.wheel_speeds[1]


def body_twist_from_wheels(vl: float, vr: float, track: float) -> tuple[float, float]:
    """(v, omega) = ((vr+vl)/2, (vr-vl)/track)."""
    if track <= 0:
        raise ValueError("track width must be > 0")
    return (vr + vl) / 2.0, (vr - vl) / track


def wheels_from_body_twist(cmd: BodyCommand, track: float) -> tuple[float, float]:
    """Inverse mapping: (vl, vr) = (v - omega*track/2, v + omega*track/2)."""
    if track <= 0:
        raise ValueError("track width must be > 0")
    half = cmd.omega * track / 2.0
    return cmd.v - half, cmd.v + half


def _toward(current: float, target: float, max_delta: float) -> float:
    if target > current + max_delta:
        return current + max_delta
    if target < current - max_delta:
        return current - max_delta
    return target


def step_pose(state: RoverState, cmd: BodyCommand, gravity: float, friction: float,
              hf: terrainmod.Heightfield, dt: float, track: float) -> RoverState:
    """Advance one control step.

    Wheel speeds slew toward the commanded targets at most mu*g*dt per step;
    the twist realized by the actual wheel speeds integrates the pose as a
    planar unicycle. If the new center leaves the terrain extent the returned
    state carries out_of_bounds=True and keeps the previous elevation.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    vl_t, vr_t = wheels_from_body_twist(cmd, track)
    dv = friction * gravity * dt
    vl = _toward(state.wheel_speeds[0], vl_t, dv)
    vr = _toward(state.wheel_speeds[1], vr_t, dv)
    v, omega = body_twist_from_wheels(vl, vr, track)
    heading = state.heading
    x = state.x + v * math.cos(heading) * dt
    y = state.y + v * math.sin(heading) * dt
    heading = wrap_angle(heading + omega * dt)
    if hf.contains(x, y):
        z = terrainmod.height_at(hf, x, y)
        oob = False
    else:
        z = state.z
        oob = True
    return RoverState(x=x, y=y, z=z, heading=heading,
                      wheel_speeds=(vl, vr, vl, vr), out_of_bounds=oob)
