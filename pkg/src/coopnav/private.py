"""Single-robot measurement updates: GNSS-style, position-only, odometry, ZU."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InnovationCovSingular
from .nav import BG, N_ERR, POS, VEL, BeliefBlock, ErrorState, NavState, symmetrize

_I15 = np.eye(N_ERR)
_MAX_COND = 1e14


class PrivateKind(enum.Enum):
    POS_VEL = "PosVel"
    POS_ONLY = "PosOnly"
    ODOM_VEL = "OdomVel"
    ZERO_VEL = "ZeroVel"


_DIM = {
    PrivateKind.POS_VEL: 6,
    PrivateKind.POS_ONLY: 3,
    PrivateKind.ODOM_VEL: 3,
    PrivateKind.ZERO_VEL: 6,
}


def _block_H(rows: int, blocks) -> np.ndarray:
    H = np.zeros((rows, N_ERR))
    for row0, cols in blocks:
        H[row0 : row0 + 3, cols] = -np.eye(3)
    return H


def H_posvel() -> np.ndarray:
    """6x15: velocity rows first, then position rows."""
    return _block_H(6, [(0, VEL), (3, POS)])


def H_posonly() -> np.ndarray:
    return _block_H(3, [(0, POS)])


def H_odomvel() -> np.ndarray:
    return _block_H(3, [(0, VEL)])


def H_zupt() -> np.ndarray:
    """6x15: gyro-bias rows first, then velocity rows."""
    return _block_H(6, [(0, BG), (3, VEL)])


_H = {
    PrivateKind.POS_VEL: H_posvel,
    PrivateKind.POS_ONLY: H_posonly,
    PrivateKind.ODOM_VEL: H_odomvel,
    PrivateKind.ZERO_VEL: H_zupt,
}


@dataclass(frozen=True)
class PrivateMeasurement:
    kind: PrivateKind
    z: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        k = _DIM[self.kind]
        z = np.asarray(self.z, dtype=float).reshape(-1)
        R = np.asarray(self.R, dtype=float)
        if z.shape != (k,) or R.shape != (k, k):
            raise ValueError(f"{self.kind.value} expects a {k}-vector and a {k}x{k} R")
        if not np.allclose(R, R.T):
            raise ValueError("R must be symmetric")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "R", R)

    @property
    def H(self) -> np.ndarray:
        return _H[self.kind]()


# -- innovations -----------------------------------------------------------


def innovation_posvel(meas_v, meas_r, state: NavState) -> np.ndarray:
    return np.concatenate((np.asarray(meas_v) - state.v_ebn, np.asarray(meas_r) - state.r_b))


def innovation_posonly(meas_r, state: NavState) -> np.ndarray:
    return np.asarray(meas_r, dtype=float) - state.r_b


def innovation_odomvel(meas_v, state: NavState) -> np.ndarray:
    return np.asarray(meas_v, dtype=float) - state.v_ebn


def zupt_innovation(omega_imu, v) -> np.ndarray:
    """Zero-velocity pseudo-measurement: true rate and velocity are zero.

    ``omega_imu`` should already have the current gyro-bias estimate
    removed, so that the residual observes the bias error state.
    """
    return -np.concatenate((np.asarray(omega_imu, dtype=float), np.asarray(v, dtype=float)))


def posvel_R(sigma_v, sigma_r) -> np.ndarray:
    sv = np.broadcast_to(np.asarray(sigma_v, dtype=float), (3,))
    sr = np.broadcast_to(np.asarray(sigma_r, dtype=float), (3,))
    return np.diag(np.concatenate((sv, sr)) ** 2)


# -- update ----------------------------------------------------------------


def kalman_gain(P: np.ndarray, H: np.ndarray, R: np.ndarray) -> np.ndarray:
    S = H @ P @ H.T + R
    S = symmetrize(np.atleast_2d(S))
    if not np.all(np.isfinite(S)):
        raise InnovationCovSingular("innovation covariance is not finite")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise InnovationCovSingular("innovation covariance is not positive definite") from exc
    d = np.diag(L)
    # (max/min of the Cholesky diagonal)^2 is a cheap lower bound on cond(S)
    if S.shape[0] > 1 and (d.max() / d.min()) ** 2 > _MAX_COND:
        raise InnovationCovSingular("innovation covariance is ill-conditioned")
    return np.linalg.solve(S, H @ P).T


def joseph(P: np.ndarray, K: np.ndarray, H: np.ndarray, R: np.ndarray) -> np.ndarray:
    A = np.eye(P.shape[0]) - K @ H
    return symmetrize(A @ P @ A.T + K @ R @ K.T)


def apply_private(
    belief: BeliefBlock,
    err: ErrorState,
    H: np.ndarray,
    z,
    R,
    factor_noise_term: bool = True,
):
    """Kalman update with a robot-local measurement.

    The covariance uses the Joseph form. Correlation factors toward peers
    are updated either with the two-sided form plus ``K R K^T`` (the
    default), or, with ``factor_noise_term=False``, with the one-sided map
    ``(I - K H) sigma`` that keeps the factored cross-covariance exact.
    """
    H = np.atleast_2d(np.asarray(H, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = belief.P
    K = kalman_gain(P, H, R)
    x = err.x + K @ (z - H @ err.x)
    A = _I15 - K @ H
    P_post = symmetrize(A @ P @ A.T + K @ R @ K.T)
    if factor_noise_term:
        KRK = K @ R @ K.T
        sigma = {k: A @ s @ A.T + KRK for k, s in belief.sigma.items()}
    else:
        sigma = {k: A @ s for k, s in belief.sigma.items()}
    return belief.with_(P=P_post, sigma=sigma), ErrorState(x)


def apply_measurement(belief: BeliefBlock, err: ErrorState, meas: PrivateMeasurement, factor_noise_term: bool = True):
    return apply_private(belief, err, meas.H, meas.z, meas.R, factor_noise_term)

