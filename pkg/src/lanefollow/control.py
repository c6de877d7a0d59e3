"""Lane-centering commands from a lane-center pixel estimate.

Two schemes: a yaw-rate command from the horizontal pixel offset alone, and a
steering-wheel command from the angle between the image's vertical axis and
the ray to the lane center. Positive yaw and positive wheel angles turn left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .detectors import LaneCenterEstimate


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class TwistCommand:
    linear_v: float
    yaw_rate: float


@dataclass(frozen=True)
class SteeringCommand:
    steering_wheel_angle: float
    target_speed: float


@dataclass(frozen=True)
class ControlConfig:
    yaw_gain: float = 0.5
    steer_gain: float = 1.0
    steering_ratio: float = 16.0
    speed: float = 2.0
    midx: float = 319.5
    image_width: int = 640
    image_height: int = 480
    yaw_max: float = 0.8
    steer_max: float = 9.6
    watchdog_ticks: int = 25

    def __post_init__(self):
        if self.yaw_gain <= 0 or self.steer_gain <= 0:
            raise ValueError("gains must be positive")
        if self.steering_ratio <= 0:
            raise ValueError("steering_ratio must be positive")
        if self.speed < 0:
            raise ValueError("speed must be non-negative")


def _clamp(v: float, bound: float) -> float:
    return max(-bound, min(bound, v))


def yaw_rate_control(est: LaneCenterEstimate, cfg: ControlConfig) -> TwistCommand | None:
    """Proportional yaw rate on the normalised pixel offset; None means hold."""
    if not est.valid:
        return None
    offset = (cfg.midx - est.cx) / (0.5 * cfg.image_width)
    return TwistCommand(linear_v=cfg.speed, yaw_rate=_clamp(cfg.yaw_gain * offset, cfg.yaw_max))


def turning_angle(est: LaneCenterEstimate, cfg: ControlConfig) -> float:
    if est.cy >= cfg.image_height:
        raise GeometryError(f"cy={est.cy} is not above the image bottom ({cfg.image_height})")
    return math.atan2(est.cx - cfg.midx, cfg.image_height - est.cy)


def steering_control(est: LaneCenterEstimate, cfg: ControlConfig) -> SteeringCommand | None:
    """Steering-wheel angle toward the lane center; None means hold."""
    if not est.valid:
        return None
    theta = turning_angle(est, cfg)
    wheel = _clamp(-cfg.steer_gain * cfg.steering_ratio * theta, cfg.steer_max)
    return SteeringCommand(steering_wheel_angle=wheel, target_speed=cfg.speed)


def stop_like(cmd):
    if isinstance(cmd, TwistCommand):
        return TwistCommand(0.0, 0.0)
    return SteeringCommand(0.0, 0.0)


def command_watchdog(last_command_age: int, cfg: ControlConfig, cmd):
    """Pass ``cmd`` through unless the last valid estimate is older than the limit."""
    if last_command_age > cfg.watchdog_ticks:
        return stop_like(cmd)
    return cmd


SCHEMES = {"steering": steering_control, "yaw": yaw_rate_control}


class LaneController:
    """Stateful wrapper: hold-last-command on invalid estimates plus the watchdog."""

    def __init__(self, cfg: ControlConfig = ControlConfig(), scheme: str = "steering"):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown control scheme {scheme!r}; choose from {sorted(SCHEMES)}")
        self.cfg = cfg
        self.scheme = scheme
        self._law = SCHEMES[scheme]
        self.age = 0
        self.last = SteeringCommand(0.0, cfg.speed) if scheme == "steering" else TwistCommand(cfg.speed, 0.0)
        self.stopped = False

    def update_config(self, cfg: ControlConfig) -> None:
        self.cfg = cfg

    def __call__(self, est: LaneCenterEstimate):
        cmd = self._law(est, self.cfg)
        if cmd is None:
            self.age += 1
            cmd = self.last
            # held commands still track speed edits
            if isinstance(cmd, SteeringCommand):
                cmd = SteeringCommand(cmd.steering_wheel_angle, self.cfg.speed)
            else:
                cmd = TwistCommand(self.cfg.speed, cmd.yaw_rate)
        else:
            self.age = 0
        self.last = cmd
        out = command_watchdog(self.age, self.cfg, cmd)
        self.stopped = out is not cmd
        return out
