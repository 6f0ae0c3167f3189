"""Kinematic bicycle integration and the two PID tracking controllers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import kernels

DT = 0.1                      # 10 Hz world tick
ACC_MIN, ACC_MAX = -3.0, 3.0  # m/s^2 actuator envelope
STEER_MAX = math.radians(30.0)
WHEELBASE_RATIO = 0.6         # wheelbase as a fraction of vehicle length
INTEGRAL_CLAMP = 10.0         # anti-windup bound on the PID integral
CROSS_TRACK_GAIN = 1.0        # Stanley-style cross-track fold gain

SPEED_GAINS = (1.0, 0.0, 0.05)
STEER_GAINS = (1.4, 0.05, 0.25)


@dataclass
class VehiclePose:
    x: float
    y: float
    psi: float  # yaw, radians
    v: float    # m/s, never negative

    def as_tuple(self):
        return (self.x, self.y, self.psi, self.v)


@dataclass
class ControlInput:
    acc: float      # m/s^2, clamped to [-3, 3]
    delta_f: float  # front-wheel angle, clamped to +/-30 deg

    def clamped(self) -> "ControlInput":
        return ControlInput(
            acc=min(max(self.acc, ACC_MIN), ACC_MAX),
            delta_f=min(max(self.delta_f, -STEER_MAX), STEER_MAX),
        )


@dataclass
class PidState:
    kp: float
    ki: float
    kd: float
    integral: float = 0.0
    prev_error: float = 0.0

    def reset(self) -> None:
        self.integral = 0.0
        self.prev_error = 0.0

    def step(self, error: float, dt: float) -> float:
        self.integral = min(max(self.integral + error * dt, -INTEGRAL_CLAMP), INTEGRAL_CLAMP)
        derivative = (error - self.prev_error) / dt
        self.prev_error = error
        return self.kp * error + self.ki * self.integral + self.kd * derivative


def speed_pid() -> PidState:
    return PidState(*SPEED_GAINS)


def steer_pid() -> PidState:
    return PidState(*STEER_GAINS)


def rear_axle_offset(length: float) -> float:
    """Distance from the center of gravity to the rear axle."""
    return 0.5 * WHEELBASE_RATIO * length


def bicycle_step(pose: VehiclePose, control: ControlInput, shape, dt: float) -> VehiclePose:
    """Advance one tick of the kinematic bicycle model.

    Inputs are clamped to the actuator envelope, never rejected; speed is
    clamped at zero (no reverse).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    c = control.clamped()
    l_r = rear_axle_offset(float(shape[0]))
    x, y, psi, v = kernels.bicycle_advance(
        pose.x, pose.y, pose.psi, pose.v, c.acc, c.delta_f, l_r, dt
    )
    return VehiclePose(x=x, y=y, psi=psi, v=v)


def pid_speed(pid: PidState, target_speed: float, current_speed: float, dt: float) -> float:
    """Longitudinal PID on the speed error; output clamped to [-3, 3] m/s^2."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    out = pid.step(target_speed - current_speed, dt)
    return min(max(out, ACC_MIN), ACC_MAX)


def lateral_error(cross_track: float, heading_error: float, speed: float) -> float:
    """Fold (cross-track, heading) into one scalar path error.

    Cross-track sign convention: positive when the vehicle sits to the left
    of the path, so the correction steers right.
    """
    return heading_error - math.atan2(CROSS_TRACK_GAIN * cross_track, speed + 0.5)


def pid_steer(pid: PidState, path_error, dt: float, speed: float = 0.0) -> float:
    """Lateral PID on the folded path error; output clamped to +/-30 deg."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    cross_track, heading_error = path_error
    out = pid.step(lateral_error(cross_track, heading_error, speed), dt)
    return min(max(out, -STEER_MAX), STEER_MAX)
