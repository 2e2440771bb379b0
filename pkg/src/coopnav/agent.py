"""Per-robot decentralized filter node.

An :class:`Agent` owns one robot's navigation state, bias estimates and
belief block. It consumes time-ordered :class:`AgentEvent` objects and
returns outbound :class:`Message` objects: peer traffic for the relative
update handshake, or stop/resume commands for its own motion controller.

Handshake (A detects B)::

    A: RangeDetected  -> PeerRequest  to B     (A freezes)
    B: PeerRequest    -> PeerBelief   to A     (B freezes)
    A: PeerBelief     -> PeerPosterior to B    (A unfreezes)
    B: PeerPosterior                           (B unfreezes)

A frozen agent buffers every other event and replays it, in order, once
the transaction completes.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import nav
from .errors import ProtocolViolation
from .nav import BeliefBlock, ErrorState, ImuSample, NavState, NoiseSpec
from .private import H_odomvel, H_posvel, H_zupt, apply_private, zupt_innovation
from .relative import (
    ORDER_PRIOR_OVER_POSTERIOR,
    PeerPayload,
    RangeMeasurement,
    couple,
    decompose,
    relative_update_detail,
    update_absent_correlations,
)

log = logging.getLogger(__name__)

POS_DIAG = (6, 7, 8)


class StopMode(enum.Enum):
    NONE = "None"
    AUTONOMOUS = "Autonomous"
    PERIODIC = "Periodic"
    AUTO_THEN_PERIODIC = "AutoThenPeriodic"


@dataclass(frozen=True)
class StopPolicy:
    mode: StopMode = StopMode.NONE
    cov_threshold: float = 5.0
    period: float = 20.0
    dwell: float = 0.5

    def __post_init__(self):
        if not self.cov_threshold > 0:
            raise ValueError("cov_threshold must be positive")
        if not self.dwell > 0:
            raise ValueError("dwell must be positive")
        if not self.period > 0:
            raise ValueError("period must be positive")


@dataclass(frozen=True)
class MotionStatus:
    cmd_vel_zero: bool = False
    encoder_speed: float = 0.0
    stationary_since: float | None = None

    def refresh(self, cmd_vel_zero: bool, encoder_speed: float, now: float, eps_enc: float) -> MotionStatus:
        still = cmd_vel_zero and abs(encoder_speed) < eps_enc
        if not still:
            since = None
        elif self.stationary_since is None:
            since = now
        else:
            since = self.stationary_since
        return MotionStatus(cmd_vel_zero, encoder_speed, since)


def detect_stationary(status: MotionStatus, now: float, dwell: float) -> bool:
    """True once command and encoder have both reported stopped for ``dwell`` s."""
    if status.stationary_since is None:
        return False
    return now - status.stationary_since >= dwell - 1e-9


class StopDecision(enum.Enum):
    CONTINUE = "Continue"
    ISSUE_STOP = "IssueStop"


@dataclass(frozen=True)
class StopHistory:
    periodic_active: bool = False
    motion_since_resume: float = 0.0
    armed: bool = True


def max_position_variance(P: np.ndarray) -> float:
    return float(max(P[i, i] for i in POS_DIAG))


def stop_decision(P: np.ndarray, policy: StopPolicy, history: StopHistory = StopHistory()) -> StopDecision:
    """Decide whether a moving robot should stop for a zero-velocity update.

    Autonomous mode fires when any position variance exceeds the threshold
    and re-arms only after the variance has dropped back below it.
    """
    mode = policy.mode
    if mode is StopMode.NONE:
        return StopDecision.CONTINUE
    periodic = mode is StopMode.PERIODIC or (mode is StopMode.AUTO_THEN_PERIODIC and history.periodic_active)
    if periodic:
        if history.motion_since_resume >= policy.period - 1e-9:
            return StopDecision.ISSUE_STOP
        return StopDecision.CONTINUE
    if history.armed and max_position_variance(P) > policy.cov_threshold:
        return StopDecision.ISSUE_STOP
    return StopDecision.CONTINUE


class EventKind(enum.Enum):
    IMU_TICK = "ImuTick"
    ENCODER_TICK = "EncoderTick"
    GNSS_TICK = "GnssTick"
    RANGE_DETECTED = "RangeDetected"
    PEER_REQUEST = "PeerRequest"
    PEER_BELIEF = "PeerBelief"
    PEER_POSTERIOR = "PeerPosterior"
    STOP_COMMAND = "StopCommand"
    RESUME_COMMAND = "ResumeCommand"


@dataclass(frozen=True)
class AgentEvent:
    t: float
    kind: EventKind
    payload: object = None
    sender: int | None = None


@dataclass(frozen=True)
class EncoderReading:
    speed: float
    cmd_vel_zero: bool


@dataclass(frozen=True)
class GnssFix:
    position: np.ndarray
    velocity: np.ndarray
    R: np.ndarray


@dataclass(frozen=True)
class RangeDetection:
    peer: int
    meas: RangeMeasurement


@dataclass(frozen=True)
class Message:
    """Outbound message; ``recipient is None`` addresses the motion controller."""

    t: float
    kind: EventKind
    sender: int
    recipient: int | None
    payload: object = None

    def as_event(self) -> AgentEvent:
        return AgentEvent(self.t, self.kind, self.payload, self.sender)


@dataclass
class UpdateRecord:
    t: float
    robot_id: int
    update_kind: str
    innovation_norm: float
    trace_P_before: float
    trace_P_after: float
    peer_id: int = -1
    extra: dict = field(default_factory=dict, repr=False)


@dataclass(frozen=True)
class AgentConfig:
    robot_id: int
    noise: NoiseSpec
    stop_policy: StopPolicy = StopPolicy()
    zu_enabled: bool = False
    odom_enabled: bool = True
    gnss_enabled: bool = False
    odom_sigma: float = 0.01
    odom_vertical_sigma: float = 1.0e3
    R_zu: np.ndarray = field(default_factory=lambda: np.diag([1e-6] * 6))
    eps_enc: float = 1e-3
    uwb_period: float = 1.0
    factor_noise_term: bool = True
    absent_factor_order: str = ORDER_PRIOR_OVER_POSTERIOR


class _Txn(enum.Enum):
    AWAIT_BELIEF = 1
    AWAIT_POSTERIOR = 2


class Agent:
    """One robot's decentralized error-state filter and stop state machine."""

    def __init__(self, cfg: AgentConfig, nav0: NavState, P0, peers=(), biases=None):
        self.cfg = cfg
        self.id = cfg.robot_id
        self.nav = nav0
        self.belief = BeliefBlock.initial(self.id, P0, peers)
        self.err = ErrorState()
        if biases is None:
            biases = (np.zeros(3), np.zeros(3))
        self.b_a = np.array(biases[0], dtype=float)
        self.b_g = np.array(biases[1], dtype=float)
        self.status = MotionStatus(cmd_vel_zero=False)
        self.history = StopHistory()
        self.stopping = False
        self.external_stop = False
        self.last_t = -np.inf
        self.stale_count = 0
        self.records: list[UpdateRecord] = []
        self.applied: list[tuple[float, str]] = []
        self.last_range: dict[int, float] = {}
        self.zu_count = 0
        self._txn: _Txn | None = None
        self._txn_peer: int | None = None
        self._txn_meas: RangeMeasurement | None = None
        self._txn_P_prior: np.ndarray | None = None
        self._buffer: list[AgentEvent] = []
        self._last_omega = np.zeros(3)
        self._omega_sum = np.zeros(3)
        self._omega_n = 0
        self._Q_cache: tuple[float, np.ndarray] | None = None

    # -- public ------------------------------------------------------------

    @property
    def frozen(self) -> bool:
        return self._txn is not None

    def step(self, event: AgentEvent) -> list[Message]:
        if event.t < self.last_t - 1e-12:
            self.stale_count += 1
            log.debug("robot %s dropped stale %s at t=%.6f", self.id, event.kind.value, event.t)
            return []
        if self.frozen:
            return self._step_frozen(event)
        self.last_t = max(self.last_t, event.t)
        return self._dispatch(event)

    # -- dispatch ----------------------------------------------------------

    def _step_frozen(self, event: AgentEvent) -> list[Message]:
        kind = event.kind
        if kind is EventKind.PEER_BELIEF and self._txn is _Txn.AWAIT_BELIEF and event.sender == self._txn_peer:
            self.last_t = max(self.last_t, event.t)
            out = self._on_peer_belief(event)
            return out + self._replay()
        if kind is EventKind.PEER_POSTERIOR:
            if self._txn is not _Txn.AWAIT_POSTERIOR or event.sender != self._txn_peer:
                raise ProtocolViolation(f"robot {self.id}: unexpected posterior from {event.sender}")
            self.last_t = max(self.last_t, event.t)
            self._on_peer_posterior(event)
            return self._replay()
        self._buffer.append(event)
        return []

    def _replay(self) -> list[Message]:
        out: list[Message] = []
        while self._buffer and not self.frozen:
            out.extend(self.step(self._buffer.pop(0)))
        return out

    def _dispatch(self, event: AgentEvent) -> list[Message]:
        kind = event.kind
        if kind is EventKind.IMU_TICK:
            return self._on_imu(event)
        if kind is EventKind.ENCODER_TICK:
            return self._on_encoder(event)
        if kind is EventKind.GNSS_TICK:
            self._on_gnss(event)
            return []
        if kind is EventKind.RANGE_DETECTED:
            return self._on_range(event)
        if kind is EventKind.PEER_REQUEST:
            return self._on_peer_request(event)
        if kind is EventKind.STOP_COMMAND:
            self.external_stop = True
            return []
        if kind is EventKind.RESUME_COMMAND:
            self.external_stop = False
            return []
        if kind is EventKind.PEER_POSTERIOR:
            raise ProtocolViolation(f"robot {self.id}: posterior from {event.sender} while not frozen")
        if kind is EventKind.PEER_BELIEF:
            raise ProtocolViolation(f"robot {self.id}: unsolicited belief from {event.sender}")
        raise ValueError(f"unknown event kind {kind}")

    # -- propagation -------------------------------------------------------

    def _Q(self, dt: float) -> np.ndarray:
        if self._Q_cache is None or self._Q_cache[0] != dt:
            self._Q_cache = (dt, nav.build_Q(self.cfg.noise, dt))
        return self._Q_cache[1]

    def _on_imu(self, event: AgentEvent) -> list[Message]:
        imu: ImuSample = event.payload
        f = np.asarray(imu.a_imu, dtype=float) - self.b_a
        F = nav.build_F(self.nav.C_bn, f)
        phi = nav.build_phi(F, imu.dt_i)
        self.nav = nav.mechanize(self.nav, imu, self.b_a, self.b_g)
        self.belief, self.err = nav.propagate(self.belief, self.err, phi, self._Q(imu.dt_i))
        self._last_omega = np.asarray(imu.omega_imu, dtype=float)
        if self.status.stationary_since is not None:
            self._omega_sum += self._last_omega
            self._omega_n += 1
        if not self.status.cmd_vel_zero:
            self.history = replace(self.history, motion_since_resume=self.history.motion_since_resume + imu.dt_i)
        return self._maybe_stop(event.t)

    def _maybe_stop(self, t: float) -> list[Message]:
        if not self.cfg.zu_enabled or self.stopping or self.external_stop:
            return []
        P = self.belief.P
        if not self.history.armed and max_position_variance(P) <= self.cfg.stop_policy.cov_threshold:
            self.history = replace(self.history, armed=True)
        if stop_decision(P, self.cfg.stop_policy, self.history) is StopDecision.ISSUE_STOP:
            self.stopping = True
            self.history = replace(self.history, armed=False)
            return [Message(t, EventKind.STOP_COMMAND, self.id, None)]
        return []

    # -- private updates ---------------------------------------------------

    def _private(self, t: float, kind: str, H, z, R, **extra) -> None:
        tr0 = float(np.trace(self.belief.P))
        nu = z - H @ self.err.x
        self.belief, self.err = apply_private(
            self.belief, self.err, H, z, R, factor_noise_term=self.cfg.factor_noise_term
        )
        self.nav, self.err, (self.b_a, self.b_g) = nav.fold_correction(self.nav, self.err, (self.b_a, self.b_g))
        self.records.append(
            UpdateRecord(t, self.id, kind, float(np.linalg.norm(nu)), tr0, float(np.trace(self.belief.P)), extra=extra)
        )
        self.applied.append((t, kind))

    def _on_encoder(self, event: AgentEvent) -> list[Message]:
        reading: EncoderReading = event.payload
        t = event.t
        if self.cfg.odom_enabled:
            v_meas = self.nav.C_bn @ np.array([reading.speed, 0.0, 0.0])
            s = self.cfg.odom_sigma
            R = np.diag([s * s, s * s, self.cfg.odom_vertical_sigma**2])
            self._private(t, "odom", H_odomvel(), v_meas - self.nav.v_ebn, R)
        was = self.status.stationary_since
        self.status = self.status.refresh(reading.cmd_vel_zero, reading.speed, t, self.cfg.eps_enc)
        if self.status.stationary_since is None or was is None:
            self._omega_sum[:] = 0.0
            self._omega_n = 0
        if not self.cfg.zu_enabled:
            return []
        if not (self.stopping or self.external_stop or reading.cmd_vel_zero):
            return []
        if not detect_stationary(self.status, t, self.cfg.stop_policy.dwell):
            return []
        return self._apply_zu(t)

    def _apply_zu(self, t: float) -> list[Message]:
        omega = self._omega_sum / self._omega_n if self._omega_n else self._last_omega
        v_before = self.nav.v_ebn.copy()
        extra = {
            "v_before": v_before,
            "b_a_before": self.b_a.copy(),
            "b_g_before": self.b_g.copy(),
            "P_bias_before": np.diag(self.belief.P)[9:15].copy(),
        }
        z = zupt_innovation(omega - self.b_g, self.nav.v_ebn)
        self._private(t, "zupt", H_zupt(), z, self.cfg.R_zu, **extra)
        rec = self.records[-1]
        rec.extra["v_after"] = self.nav.v_ebn.copy()
        rec.extra["b_a_after"] = self.b_a.copy()
        rec.extra["b_g_after"] = self.b_g.copy()
        rec.extra["P_bias_after"] = np.diag(self.belief.P)[9:15].copy()
        self.zu_count += 1
        self.status = replace(self.status, stationary_since=t)
        self._omega_sum[:] = 0.0
        self._omega_n = 0
        out: list[Message] = []
        if self.stopping:
            policy = self.cfg.stop_policy
            if policy.mode is StopMode.AUTO_THEN_PERIODIC and max_position_variance(self.belief.P) > policy.cov_threshold:
                self.history = replace(self.history, periodic_active=True)
            self.stopping = False
            self.history = replace(self.history, motion_since_resume=0.0)
            out.append(Message(t, EventKind.RESUME_COMMAND, self.id, None))
        return out

    def _on_gnss(self, event: AgentEvent) -> None:
        if not self.cfg.gnss_enabled:
            return
        fix: GnssFix = event.payload
        z = np.concatenate((fix.velocity - self.nav.v_ebn, fix.position - self.nav.r_b))
        self._private(event.t, "gnss", H_posvel(), z, fix.R)

    # -- relative update ---------------------------------------------------

    def _on_range(self, event: AgentEvent) -> list[Message]:
        det: RangeDetection = event.payload
        last = self.last_range.get(det.peer)
        if last is not None and event.t - last < self.cfg.uwb_period - 1e-9:
            return []
        self.last_range[det.peer] = event.t
        self._txn = _Txn.AWAIT_BELIEF
        self._txn_peer = det.peer
        self._txn_meas = det.meas
        return [Message(event.t, EventKind.PEER_REQUEST, self.id, det.peer)]

    def _on_peer_request(self, event: AgentEvent) -> list[Message]:
        peer = event.sender
        self.last_range[peer] = event.t
        sigma = self.belief.sigma.get(peer, np.zeros((nav.N_ERR, nav.N_ERR)))
        payload = PeerPayload.from_belief(self.id, event.t, self.err, self.belief.P, sigma, self.nav)
        self._txn = _Txn.AWAIT_POSTERIOR
        self._txn_peer = peer
        self._txn_P_prior = self.belief.P.copy()
        return [Message(event.t, EventKind.PEER_BELIEF, self.id, peer, payload)]

    def _end_txn(self) -> None:
        self._txn = None
        self._txn_peer = None
        self._txn_meas = None
        self._txn_P_prior = None

    def _on_peer_belief(self, event: AgentEvent) -> list[Message]:
        payload: PeerPayload = event.payload
        peer = payload.sender_id
        state_B = payload.nav_state()
        belief_B = BeliefBlock(payload.P, peer, {self.id: payload.sigma_toward_sender})
        P_prior = self.belief.P
        tr0 = float(np.trace(P_prior)) + float(np.trace(payload.P))
        joint = couple(self.belief, belief_B, self.err, ErrorState(payload.x_err))
        res = relative_update_detail(joint, self._txn_meas, self.nav, state_B)
        parts = decompose(res.coupled, self.belief, belief_B, state_B, event.t)
        belief_A = update_absent_correlations(parts.belief_A, P_prior, parts.belief_A.P, exclude=(peer,), order=self.cfg.absent_factor_order)
        self.belief = belief_A
        self.nav, self.err, (self.b_a, self.b_g) = nav.fold_correction(self.nav, parts.err_A, (self.b_a, self.b_g))
        self.records.append(
            UpdateRecord(
                event.t,
                self.id,
                "range",
                abs(res.innovation),
                tr0,
                float(np.trace(res.coupled.P_global)),
                peer_id=peer,
                extra={"z": self._txn_meas.z_uwb, "predicted": res.predicted},
            )
        )
        self.applied.append((event.t, "range"))
        self._end_txn()
        return [Message(event.t, EventKind.PEER_POSTERIOR, self.id, peer, parts.payload_for_B)]

    def _on_peer_posterior(self, event: AgentEvent) -> None:
        payload: PeerPayload = event.payload
        peer = payload.sender_id
        P_prior = self._txn_P_prior
        sigma = dict(self.belief.sigma)
        sigma[peer] = payload.sigma_toward_sender.copy()
        belief = self.belief.with_(P=payload.P.copy(), sigma=sigma)
        self.belief = update_absent_correlations(belief, P_prior, belief.P, exclude=(peer,), order=self.cfg.absent_factor_order)
        self.nav, self.err, (self.b_a, self.b_g) = nav.fold_correction(
            self.nav, ErrorState(payload.x_err), (self.b_a, self.b_g)
        )
        self.records.append(
            UpdateRecord(
                event.t,
                self.id,
                "range_posterior",
                float(np.linalg.norm(payload.x_err)),
                float(np.trace(P_prior)),
                float(np.trace(self.belief.P)),
                peer_id=peer,
            )
        )
        self.applied.append((event.t, "range_posterior"))
        self._end_txn()
