"""Pairwise UWB range update between two robots' decentralized beliefs.

Robot A detects robot B, couples both beliefs into one 30-state system,
runs a scalar range update, and splits the posterior back. The joint
cross-covariance is never stored whole; each robot keeps a factor so that
``Sigma_AB = sigma_AB @ sigma_BA.T``. After the split A holds the identity
and B holds the posterior cross block.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateGeometry, NotPSD
from .nav import N_ERR, POS, BeliefBlock, ErrorState, NavState, symmetrize
from .private import kalman_gain

log = logging.getLogger(__name__)

N_JOINT = 2 * N_ERR
POS_A = POS
POS_B = slice(N_ERR + POS.start, N_ERR + POS.stop)
MIN_SEPARATION = 1e-6
_PSD_RTOL = 1e-9
_I15 = np.eye(N_ERR)

ORDER_PRIOR_OVER_POSTERIOR = "prior_over_posterior"
ORDER_POSTERIOR_OVER_PRIOR = "posterior_over_prior"


class SingularPosteriorWarning(RuntimeWarning):
    """Correlation factors were left unchanged because a covariance was singular."""


@dataclass(frozen=True)
class CoupledBelief:
    P_global: np.ndarray
    x_err_joint: np.ndarray
    ids: tuple

    @property
    def cross(self) -> np.ndarray:
        """Sigma_AB, the top-right 15x15 block."""
        return self.P_global[:N_ERR, N_ERR:]


@dataclass(frozen=True)
class RangeMeasurement:
    z_uwb: float
    R_range: float

    def __post_init__(self):
        if self.z_uwb < 0:
            raise ValueError("range must be non-negative")
        if not self.R_range > 0:
            raise ValueError("range variance must be positive")


def check_psd(P: np.ndarray, what: str = "covariance") -> None:
    lam = np.linalg.eigvalsh(symmetrize(P)).min()
    tol = _PSD_RTOL * max(np.trace(P), 1e-300)
    if lam < -tol:
        raise NotPSD(f"{what} has eigenvalue {lam:.3g} (tolerance {-tol:.3g})")


def couple(
    belief_A: BeliefBlock,
    belief_B: BeliefBlock,
    err_A: ErrorState | None = None,
    err_B: ErrorState | None = None,
    validate: bool = True,
) -> CoupledBelief:
    a, b = belief_A.own_id, belief_B.own_id
    s_ab = belief_A.sigma.get(b, np.zeros((N_ERR, N_ERR)))
    s_ba = belief_B.sigma.get(a, np.zeros((N_ERR, N_ERR)))
    cross = s_ab @ s_ba.T
    P = np.block([[belief_A.P, cross], [cross.T, belief_B.P]])
    if validate:
        check_psd(P, f"joint covariance of robots {a} and {b}")
    xa = np.zeros(N_ERR) if err_A is None else err_A.x
    xb = np.zeros(N_ERR) if err_B is None else err_B.x
    return CoupledBelief(P, np.concatenate((xa, xb)), (a, b))


def range_model(r_A, r_B) -> float:
    d = np.asarray(r_B, dtype=float) - np.asarray(r_A, dtype=float)
    h = float(np.sqrt(d @ d))
    if h < MIN_SEPARATION:
        raise DegenerateGeometry(f"robots are {h:.3g} m apart")
    return h


def range_jacobian(r_A, r_B) -> np.ndarray:
    """1x30 derivative of the range with respect to both robots' positions."""
    r_A = np.asarray(r_A, dtype=float)
    r_B = np.asarray(r_B, dtype=float)
    h = range_model(r_A, r_B)
    J = np.zeros((1, N_JOINT))
    J[0, POS_A] = (r_A - r_B) / h
    J[0, POS_B] = (r_B - r_A) / h
    return J


def range_error_jacobian(r_A, r_B) -> np.ndarray:
    """Jacobian with respect to the joint error state.

    Positions are corrected as ``r = r_est - dr``, so this is the negated
    position Jacobian.
    """
    return -range_jacobian(r_A, r_B)


class RangeUpdateResult(NamedTuple):
    coupled: CoupledBelief
    innovation: float
    predicted: float


def relative_update_detail(
    coupled: CoupledBelief, meas: RangeMeasurement, state_A: NavState, state_B: NavState
) -> RangeUpdateResult:
    H = range_error_jacobian(state_A.r_b, state_B.r_b)
    h = range_model(state_A.r_b, state_B.r_b)
    R = np.array([[meas.R_range]])
    P = coupled.P_global
    x = coupled.x_err_joint
    K = kalman_gain(P, H, R)
    nu = meas.z_uwb - h - float((H @ x)[0])
    x_post = x + K[:, 0] * nu
    A = np.eye(N_JOINT) - K @ H
    P_post = symmetrize(A @ P @ A.T + K @ R @ K.T)
    return RangeUpdateResult(CoupledBelief(P_post, x_post, coupled.ids), nu, h)


def relative_update(
    coupled: CoupledBelief, meas: RangeMeasurement, state_A: NavState, state_B: NavState
) -> CoupledBelief:
    return relative_update_detail(coupled, meas, state_A, state_B).coupled


@dataclass(frozen=True)
class PeerPayload:
    """Wire message exchanged during a relative update.

    Field order is fixed: sender_id, timestamp, x_err, P (row-major),
    sigma_toward_sender (row-major), nav_state {C, v, r}.
    """

    sender_id: int
    timestamp: float
    x_err: np.ndarray
    P: np.ndarray
    sigma_toward_sender: np.ndarray
    C: np.ndarray
    v: np.ndarray
    r: np.ndarray

    def to_dict(self) -> dict:
        return {
            "sender_id": int(self.sender_id),
            "timestamp": float(self.timestamp),
            "x_err": [float(v) for v in self.x_err],
            "P": [float(v) for v in self.P.reshape(-1)],
            "sigma_toward_sender": [float(v) for v in self.sigma_toward_sender.reshape(-1)],
            "nav_state": {
                "C": [float(v) for v in self.C.reshape(-1)],
                "v": [float(v) for v in self.v],
                "r": [float(v) for v in self.r],
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> PeerPayload:
        nav = d["nav_state"]
        return cls(
            sender_id=int(d["sender_id"]),
            timestamp=float(d["timestamp"]),
            x_err=np.array(d["x_err"], dtype=float).reshape(N_ERR),
            P=np.array(d["P"], dtype=float).reshape(N_ERR, N_ERR),
            sigma_toward_sender=np.array(d["sigma_toward_sender"], dtype=float).reshape(N_ERR, N_ERR),
            C=np.array(nav["C"], dtype=float).reshape(3, 3),
            v=np.array(nav["v"], dtype=float).reshape(3),
            r=np.array(nav["r"], dtype=float).reshape(3),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> PeerPayload:
        return cls.from_dict(json.loads(text))

    def nav_state(self) -> NavState:
        return NavState(self.C.copy(), self.v.copy(), self.r.copy(), self.timestamp)

    @classmethod
    def from_belief(
        cls, sender_id: int, t: float, err: ErrorState, P: np.ndarray, sigma_toward: np.ndarray, state: NavState
    ) -> PeerPayload:
        return cls(sender_id, t, err.x.copy(), P.copy(), sigma_toward.copy(), state.C_bn.copy(), state.v_ebn.copy(), state.r_b.copy())


class Decomposed(NamedTuple):
    belief_A: BeliefBlock
    belief_B: BeliefBlock
    payload_for_B: PeerPayload
    err_A: ErrorState
    err_B: ErrorState


def decompose(
    coupled: CoupledBelief,
    belief_A: BeliefBlock,
    belief_B: BeliefBlock,
    state_B: NavState | None = None,
    t: float = 0.0,
) -> Decomposed:
    """Split a joint posterior back into per-robot beliefs.

    A keeps its marginal and the identity factor toward B; B gets its
    marginal and ``Sigma_BA`` as its factor toward A. Factors toward robots
    outside the pair are left for :func:`update_absent_correlations`.
    """
    a, b = coupled.ids
    P = coupled.P_global
    P_A = symmetrize(P[:N_ERR, :N_ERR])
    P_B = symmetrize(P[N_ERR:, N_ERR:])
    sigma_BA = P[N_ERR:, :N_ERR].copy()
    sig_A = dict(belief_A.sigma)
    sig_A[b] = _I15.copy()
    sig_B = dict(belief_B.sigma)
    sig_B[a] = sigma_BA
    err_A = ErrorState(coupled.x_err_joint[:N_ERR])
    err_B = ErrorState(coupled.x_err_joint[N_ERR:])
    if state_B is None:
        state_B = NavState(np.eye(3), np.zeros(3), np.zeros(3), t)
    payload = PeerPayload.from_belief(a, t, err_B, P_B, sigma_BA, state_B)
    return Decomposed(belief_A.with_(P=P_A, sigma=sig_A), belief_B.with_(P=P_B, sigma=sig_B), payload, err_A, err_B)


def _solve_right(M: np.ndarray, P_inv_target: np.ndarray) -> np.ndarray | None:
    """Return M @ inv(P) for symmetric P, or None if P is numerically singular."""
    if not np.all(np.isfinite(P_inv_target)):
        return None
    if np.linalg.cond(P_inv_target) > 1e15:
        return None
    try:
        return np.linalg.solve(P_inv_target, M.T).T
    except np.linalg.LinAlgError:
        return None


def update_absent_correlations(
    belief: BeliefBlock,
    P_prior: np.ndarray,
    P_post: np.ndarray,
    exclude=(),
    order: str = ORDER_PRIOR_OVER_POSTERIOR,
) -> BeliefBlock:
    """Carry a relative update into the factors toward robots not involved.

    ``order='prior_over_posterior'`` uses ``P_prior @ inv(P_post)``;
    ``order='posterior_over_prior'`` uses ``P_post @ inv(P_prior)``, which is
    the map a linear update actually applies to cross-covariances.
    """
    if order == ORDER_PRIOR_OVER_POSTERIOR:
        num, den = P_prior, P_post
    elif order == ORDER_POSTERIOR_OVER_PRIOR:
        num, den = P_post, P_prior
    else:
        raise ValueError(f"unknown absent-factor order {order!r}")
    targets = [k for k in belief.sigma if k not in exclude]
    if not targets:
        return belief
    M = _solve_right(num, den)
    if M is None:
        lam = 1e-12 * np.trace(den) / N_ERR
        M = _solve_right(num, den + lam * _I15)
    if M is None:
        msg = f"robot {belief.own_id}: singular covariance in correlation bookkeeping; factors left unchanged"
        log.warning(msg)
        warnings.warn(msg, SingularPosteriorWarning, stacklevel=2)
        return belief
    sigma = dict(belief.sigma)
    for k in targets:
        sigma[k] = M @ sigma[k]
    return belief.with_(sigma=sigma)
