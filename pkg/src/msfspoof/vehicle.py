"""Planar vehicle kinematics, steering conversion and a lateral controller."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class TransitionModel:
    """One IMU integration step: body-frame acceleration, yaw rate, duration."""

    accel_body: tuple[float, float]
    yaw_rate: float
    dt: float

    def __post_init__(self):
        vals = [*self.accel_body, self.yaw_rate, self.dt]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("transition entries must be finite")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class ControllerConfig:
    gain_lateral: float = 0.4
    gain_heading: float = 0.0
    steering_ratio: float = 16.0
    cycle_time: float = 0.01
    max_steering: float = 8.0

    def __post_init__(self):
        if not self.steering_ratio > 0 or not self.cycle_time > 0:
            raise ValueError("steering_ratio and cycle_time must be positive")
        if self.gain_lateral < 0 or self.gain_heading < 0:
            raise ValueError("controller gains must be non-negative")
        if not self.max_steering > 0:
            raise ValueError("max_steering must be positive")


def steering_to_pose_delta(v: float, cfg: ControllerConfig, theta: float) -> tuple[float, float]:
    """Convert a steering-wheel angle into a per-cycle lateral shift and yaw-rate change.

    The road-wheel angle is ``theta / steering_ratio``; over one controller
    cycle ``t`` the car moves ``v t sin(theta/phi)`` sideways and turns at
    ``(theta/phi) / t``.
    """
    if v < 0:
        raise ValueError("speed must be non-negative")
    if abs(theta) > cfg.max_steering:
        raise ValueError("steering angle exceeds max_steering")
    wheel = theta / cfg.steering_ratio
    t = cfg.cycle_time
    return v * t * math.sin(wheel), wheel / t


def lateral_controller(lateral_dev: float, heading_err: float, cfg: ControllerConfig) -> float:
    """Proportional steering law that pushes the car back toward the lane center."""
    if not (math.isfinite(lateral_dev) and math.isfinite(heading_err)):
        raise ValueError("controller inputs must be finite")
    u = -cfg.gain_lateral * lateral_dev - cfg.gain_heading * heading_err
    return min(max(u, -cfg.max_steering), cfg.max_steering)


def integrate_pose(pose, tm: TransitionModel):
    """Advance a noise-free pose with the same kinematic map the filter predicts with."""
    dt = tm.dt
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    ax, ay = tm.accel_body
    vel = np.asarray(pose.velocity, dtype=float)
    new_vel = vel + np.array([c * ax - s * ay, s * ax + c * ay]) * dt
    heading = math.atan2(math.sin(pose.heading + tm.yaw_rate * dt), math.cos(pose.heading + tm.yaw_rate * dt))
    if heading == -math.pi:
        heading = math.pi
    return replace(
        pose,
        position=np.asarray(pose.position, dtype=float) + vel * dt,
        velocity=new_vel,
        heading=heading,
        timestamp=pose.timestamp + dt,
    )
