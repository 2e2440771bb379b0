"""Ground-truth kinematics for flat-world robots on straight-line scripts.

Each robot keeps a fixed heading; its script is a list of constant-speed
segments measured in motion time, so a stop pauses the script rather than
skipping part of it. Velocity changes take effect at the next truth step
and position is integrated with the trapezoid rule, which makes noiseless
strapdown mechanization reproduce the truth exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..nav import dcm_from_yaw


@dataclass(frozen=True)
class MotionScript:
    heading: float
    durations: tuple = ()
    speeds: tuple = ()

    @classmethod
    def from_segments(cls, heading_deg: float, segments) -> MotionScript:
        durations = tuple(float(s.duration if hasattr(s, "duration") else s[0]) for s in segments)
        speeds = tuple(float(s.speed if hasattr(s, "speed") else s[1]) for s in segments)
        return cls(np.deg2rad(heading_deg), durations, speeds)

    @property
    def direction(self) -> np.ndarray:
        return np.array([np.cos(self.heading), np.sin(self.heading), 0.0])

    def speed_at(self, s: float) -> float:
        """Commanded speed at motion time ``s``; segments are ``(start, end]``."""
        end = 0.0
        for d, v in zip(self.durations, self.speeds):
            end += d
            if s <= end + 1e-9:
                return v
        return 0.0


@dataclass(frozen=True)
class RobotTruth:
    r: np.ndarray
    v: np.ndarray
    C: np.ndarray
    b_a: np.ndarray
    b_g: np.ndarray
    motion_time: float = 0.0
    released: bool = True
    paused: bool = False

    @classmethod
    def at_rest(cls, start, heading: float, b_a=None, b_g=None, released: bool = True) -> RobotTruth:
        z = np.zeros(3)
        return cls(
            np.array(start, dtype=float),
            z.copy(),
            dcm_from_yaw(heading),
            z.copy() if b_a is None else np.array(b_a, dtype=float),
            z.copy() if b_g is None else np.array(b_g, dtype=float),
            released=released,
        )

    @property
    def moving(self) -> bool:
        return self.released and not self.paused

    def commanded_speed(self, script: MotionScript) -> float:
        return script.speed_at(self.motion_time) if self.moving else 0.0


def initial_truth(start, script: MotionScript, b_a=None, b_g=None, released: bool = True) -> RobotTruth:
    """Truth at t=0, already rolling at the first scripted speed if released."""
    t = RobotTruth.at_rest(start, script.heading, b_a, b_g, released)
    return replace(t, v=t.commanded_speed(script) * script.direction)


def advance_truth(truth: RobotTruth, dt: float, script: MotionScript) -> RobotTruth:
    if not dt > 0:
        raise ValueError("dt must be positive")
    moving = truth.moving
    s = truth.motion_time + dt if moving else truth.motion_time
    speed = script.speed_at(s) if moving else 0.0
    v_new = speed * script.direction
    r_new = truth.r + 0.5 * dt * (truth.v + v_new)
    return replace(truth, r=r_new, v=v_new, motion_time=s)
