"""Noisy sensor synthesis and the seeded random streams that drive it.

Every (robot, sensor) pair draws from its own generator, and every UWB
pair from its own, so changing what one robot does never shifts another
robot's noise. Samplers always consume the same number of draws whether
or not the reading is used.
"""

from __future__ import annotations

import numpy as np

from ..agent import EncoderReading, GnssFix
from ..nav import GRAVITY_ENU, ImuSample
from ..relative import RangeMeasurement

SENSOR_CODES = {"imu": 0, "encoder": 1, "gnss": 2, "bias": 3, "init": 4}
_UWB_CODE = 7


def stream(seed: int, robot_id: int, sensor: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(robot_id), SENSOR_CODES[sensor]]))


def pair_stream(seed: int, a: int, b: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _UWB_CODE, int(a), int(b)]))


def sample_imu(v_prev, v_new, C_true, b_a, b_g, dt: float, model, rng, omega_true=None) -> ImuSample:
    """Specific force from the velocity change over the step, plus bias and noise."""
    n = rng.standard_normal(6)
    f_n = (np.asarray(v_new) - np.asarray(v_prev)) / dt - GRAVITY_ENU
    a = C_true.T @ f_n + b_a + model.accel_sigma * n[:3]
    w = np.zeros(3) if omega_true is None else C_true.T @ np.asarray(omega_true, dtype=float)
    omega = w + b_g + model.gyro_sigma * n[3:]
    return ImuSample(a, omega, dt)


def sample_encoder(speed: float, cmd_vel_zero: bool, model, rng) -> EncoderReading:
    """Wheel speed; reads exactly zero while the wheels are not turning."""
    n = rng.standard_normal()
    if speed == 0.0:
        return EncoderReading(0.0, cmd_vel_zero)
    return EncoderReading(float(speed + model.sigma * n), cmd_vel_zero)


def sample_gnss(r, v, model, rng, sigma_floor: float = 1e-4) -> GnssFix:
    n = rng.standard_normal(6)
    sv, sp = max(model.vel_sigma, sigma_floor), max(model.pos_sigma, sigma_floor)
    R = np.diag([sv * sv] * 3 + [sp * sp] * 3)
    return GnssFix(np.asarray(r) + model.pos_sigma * n[3:], np.asarray(v) + model.vel_sigma * n[:3], R)


def sample_uwb(r_a, r_b, model, rng, gate: float, sigma_floor: float = 1e-3) -> RangeMeasurement | None:
    """Noisy range between two robots, or None beyond the gate distance."""
    n = rng.standard_normal()
    d = float(np.linalg.norm(np.asarray(r_b, dtype=float) - np.asarray(r_a, dtype=float)))
    if d > gate:
        return None
    sigma = max(model.sigma, sigma_floor)
    return RangeMeasurement(max(d + model.sigma * n, 0.0), sigma * sigma)
