"""Strapdown mechanization and error-state propagation in a local ENU frame.

Error-state layout (15 entries)::

    [0:3]   dpsi  attitude error (rad)
    [3:6]   dv    velocity error, estimate minus truth (m/s)
    [6:9]   dr    position error, estimate minus truth (m)
    [9:12]  b_a   accelerometer bias residual, truth minus estimate (m/s^2)
    [12:15] b_g   gyro bias residual, truth minus estimate (rad/s)

The attitude error is defined by ``C_est = (I + [dpsi]x) C_true``. With
this layout every direct measurement Jacobian is a ``-I`` block and the
estimated error is subtracted from the total state when it is folded in,
while bias residuals are added to the running bias estimate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_ERR = 15
ATT = slice(0, 3)
VEL = slice(3, 6)
POS = slice(6, 9)
BA = slice(9, 12)
BG = slice(12, 15)

GRAVITY_ENU = np.array([0.0, 0.0, -9.81])

_I3 = np.eye(3)
_I15 = np.eye(N_ERR)


def skew(v) -> np.ndarray:
    """Return the cross-product matrix ``[v]x`` so that ``[v]x @ u == v x u``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def reorthonormalize(C: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the columns of ``C``; keeps a right-handed frame."""
    c0 = C[:, 0] / np.sqrt(C[:, 0] @ C[:, 0])
    c1 = C[:, 1] - (c0 @ C[:, 1]) * c0
    c1 = c1 / np.sqrt(c1 @ c1)
    out = np.empty((3, 3))
    out[:, 0] = c0
    out[:, 1] = c1
    out[0, 2] = c0[1] * c1[2] - c0[2] * c1[1]
    out[1, 2] = c0[2] * c1[0] - c0[0] * c1[2]
    out[2, 2] = c0[0] * c1[1] - c0[1] * c1[0]
    return out


def symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def euler_from_dcm(C: np.ndarray) -> tuple[float, float, float]:
    """Return (yaw, pitch, roll) in radians for a body-to-ENU DCM (Z-Y-X)."""
    yaw = float(np.arctan2(C[1, 0], C[0, 0]))
    pitch = float(-np.arcsin(np.clip(C[2, 0], -1.0, 1.0)))
    roll = float(np.arctan2(C[2, 1], C[2, 2]))
    return yaw, pitch, roll


def dcm_from_yaw(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class NavState:
    """Total navigation state: body-to-ENU DCM, velocity and position."""

    C_bn: np.ndarray
    v_ebn: np.ndarray
    r_b: np.ndarray
    t: float = 0.0

    @classmethod
    def from_arrays(cls, C_bn, v_ebn, r_b, t: float = 0.0) -> NavState:
        return cls(
            np.array(C_bn, dtype=float).reshape(3, 3),
            np.array(v_ebn, dtype=float).reshape(3),
            np.array(r_b, dtype=float).reshape(3),
            float(t),
        )

    def replace(self, **kw) -> NavState:
        fields = {"C_bn": self.C_bn, "v_ebn": self.v_ebn, "r_b": self.r_b, "t": self.t}
        fields.update(kw)
        return NavState(**fields)


class ErrorState:
    """Named view over the 15-element error-state vector."""

    __slots__ = ("x",)

    def __init__(self, x=None):
        self.x = np.zeros(N_ERR) if x is None else np.array(x, dtype=float).reshape(N_ERR)

    @classmethod
    def zero(cls) -> ErrorState:
        return cls()

    @property
    def dpsi(self) -> np.ndarray:
        return self.x[ATT]

    @property
    def dv(self) -> np.ndarray:
        return self.x[VEL]

    @property
    def dr(self) -> np.ndarray:
        return self.x[POS]

    @property
    def b_a(self) -> np.ndarray:
        return self.x[BA]

    @property
    def b_g(self) -> np.ndarray:
        return self.x[BG]

    def __repr__(self) -> str:
        return f"ErrorState({self.x!r})"


@dataclass(frozen=True)
class BeliefBlock:
    """One robot's covariance plus its correlation factors toward every peer.

    ``sigma[peer]`` is this robot's half of the factored cross-covariance:
    the joint block with ``peer`` is ``sigma[peer] @ peer.sigma[own_id].T``.
    """

    P: np.ndarray
    own_id: int
    sigma: dict = field(default_factory=dict)

    @classmethod
    def initial(cls, own_id: int, P0, peers=()) -> BeliefBlock:
        P0 = symmetrize(np.array(P0, dtype=float))
        return cls(P0, own_id, {p: np.zeros((N_ERR, N_ERR)) for p in peers if p != own_id})

    def with_(self, P=None, sigma=None) -> BeliefBlock:
        return BeliefBlock(
            self.P if P is None else P,
            self.own_id,
            self.sigma if sigma is None else sigma,
        )


@dataclass(frozen=True)
class ImuSample:
    a_imu: np.ndarray
    omega_imu: np.ndarray
    dt_i: float

    def __post_init__(self):
        if not self.dt_i > 0:
            raise ValueError(f"IMU sampling interval must be positive, got {self.dt_i}")


@dataclass(frozen=True)
class NoiseSpec:
    """Continuous-time IMU noise densities used to build the process noise.

    arw in rad/sqrt(s), vrw in m/s/sqrt(s), bias instabilities in rad/s and
    m/s^2 (treated as random-walk driving densities per sqrt(s)).
    """

    arw: float
    vrw: float
    gyro_bias_instab: float
    accel_bias_instab: float

    def __post_init__(self):
        for name in ("arw", "vrw", "gyro_bias_instab", "accel_bias_instab"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def from_sample_sigmas(
        cls,
        accel_sigma: float,
        gyro_sigma: float,
        dt_i: float,
        accel_bias_instab: float = 0.0,
        gyro_bias_instab: float = 0.0,
    ) -> NoiseSpec:
        """Convert per-sample white-noise sigmas at rate 1/dt_i into densities."""
        root = np.sqrt(dt_i)
        return cls(
            arw=gyro_sigma * root,
            vrw=accel_sigma * root,
            gyro_bias_instab=gyro_bias_instab,
            accel_bias_instab=accel_bias_instab,
        )


# -- mechanization ---------------------------------------------------------


def attitude_update(state: NavState, imu: ImuSample, bias_g) -> NavState:
    """First-order DCM update with the bias-corrected body rate."""
    omega = np.asarray(imu.omega_imu, dtype=float) - bias_g
    C = state.C_bn @ (_I3 + skew(omega) * imu.dt_i)
    return state.replace(C_bn=reorthonormalize(C))


def velocity_update(state: NavState, imu: ImuSample, bias_a, C_bn_prev=None) -> NavState:
    """Euler velocity update; ``C_bn_prev`` is the DCM from the start of the cycle."""
    C = state.C_bn if C_bn_prev is None else C_bn_prev
    f = np.asarray(imu.a_imu, dtype=float) - bias_a
    v = state.v_ebn + (C @ f + GRAVITY_ENU) * imu.dt_i
    return state.replace(v_ebn=v)


def position_update(state: NavState, v_minus, dt: float) -> NavState:
    """Trapezoidal integration between the old and new velocity."""
    r = state.r_b + 0.5 * dt * (np.asarray(v_minus, dtype=float) + state.v_ebn)
    return state.replace(r_b=r)


def mechanize(state: NavState, imu: ImuSample, bias_a, bias_g) -> NavState:
    """Run one full attitude/velocity/position cycle and advance the clock."""
    C_prev = state.C_bn
    v_prev = state.v_ebn
    s = attitude_update(state, imu, bias_g)
    s = velocity_update(s, imu, bias_a, C_bn_prev=C_prev)
    s = position_update(s, v_prev, imu.dt_i)
    return s.replace(t=state.t + imu.dt_i)


# -- error-state model -----------------------------------------------------


def build_F(C_bn: np.ndarray, a_imu_corrected) -> np.ndarray:
    F = np.zeros((N_ERR, N_ERR))
    F[ATT, BG] = C_bn
    F[VEL, ATT] = skew(-(C_bn @ a_imu_corrected))
    F[VEL, BA] = C_bn
    F[POS, VEL] = _I3
    return F


def build_phi(F: np.ndarray, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    return _I15 + F * dt


def build_Q(noise: NoiseSpec, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError("dt must be positive")
    q = np.zeros(N_ERR)
    q[ATT] = noise.arw**2 * dt
    q[VEL] = noise.vrw**2 * dt
    q[BA] = noise.accel_bias_instab**2 * dt
    q[BG] = noise.gyro_bias_instab**2 * dt
    return np.diag(q)


def propagate(belief: BeliefBlock, err: ErrorState, phi: np.ndarray, Q: np.ndarray):
    """Time-propagate error state, covariance and every correlation factor."""
    x = phi @ err.x
    P = symmetrize(phi @ belief.P @ phi.T + Q)
    sigma = {k: phi @ s for k, s in belief.sigma.items()}
    return belief.with_(P=P, sigma=sigma), ErrorState(x)


def fold_correction(state: NavState, err: ErrorState, biases):
    """Apply the estimated error to the total state and reset it.

    Returns ``(state, zero_error, (b_a, b_g))``.
    """
    b_a, b_g = biases
    x = err.x
    if not np.all(np.isfinite(x)):
        raise ValueError("error state is not finite")
    if not np.any(x):
        return state, ErrorState(), (np.array(b_a, dtype=float), np.array(b_g, dtype=float))
    C = reorthonormalize((_I3 - skew(x[ATT])) @ state.C_bn)
    new_state = state.replace(C_bn=C, v_ebn=state.v_ebn - x[VEL], r_b=state.r_b - x[POS])
    return new_state, ErrorState(), (b_a + x[BA], b_g + x[BG])
