"""Single-threaded discrete-event runner for a multi-robot scenario.

All sensor ticks sit on one heap keyed by ``(time, sensor rank, robot id)``
so IMU propagation at an instant always precedes encoder, GNSS and UWB
events at that same instant. Tick times are ``k / rate`` so that streams
with commensurate rates land on bit-identical timestamps.

Agent messages go through an in-process FIFO bus with zero latency, so a
relative-update handshake completes before the next tick is dequeued.
"""

from __future__ import annotations

import heapq
import logging
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from ..agent import (
    Agent,
    AgentConfig,
    AgentEvent,
    EventKind,
    RangeDetection,
    StopMode,
    StopPolicy,
    UpdateRecord,
)
from ..metrics import MetricsReport, compute_metrics
from ..nav import N_ERR, NavState, NoiseSpec, euler_from_dcm, reorthonormalize, skew
from .config import ScenarioConfig
from .sensors import pair_stream, sample_encoder, sample_gnss, sample_imu, sample_uwb, stream
from .truth import MotionScript, RobotTruth, advance_truth, initial_truth

log = logging.getLogger(__name__)

_IMU, _ENC, _GNSS, _UWB = range(4)

BELIEF_COLUMNS = (
    "t", "robot_id", "rE", "rN", "rU", "vE", "vN", "vU", "yaw", "pitch", "roll",
    "P66", "P77", "P88", "zu_active", "rel_update_peer",
)
TRUTH_COLUMNS = ("t", "robot_id", "rE", "rN", "rU", "vE", "vN", "vU", "yaw", "pitch", "roll")
BIAS_COLUMNS = ("b_a_est", "b_g_est", "b_a_true", "b_g_true", "P_bias")


@dataclass
class RobotSim:
    rid: int
    script: MotionScript
    truth: RobotTruth
    agent: Agent
    hold_after_contact: float | None
    rng_imu: np.random.Generator
    rng_enc: np.random.Generator
    rng_gnss: np.random.Generator
    rng_bias: np.random.Generator
    contact_time: float | None = None
    zu_flag: bool = False
    rel_peer: int = -1
    trace: list = field(default_factory=list)
    truth_trace: list = field(default_factory=list)
    bias_trace: list = field(default_factory=list)


@dataclass
class RunArtifacts:
    """Everything a run produced. Traces are ``{robot_id: 2-D array}``."""

    config: ScenarioConfig
    beliefs: dict
    truth: dict
    biases: dict
    events: list
    exchanges: list
    metrics: MetricsReport
    agents: dict
    stale_messages: int = 0

    def belief_rows(self):
        for rid in sorted(self.beliefs):
            yield from self.beliefs[rid]

    def events_of(self, kind: str, robot_id: int | None = None) -> list[UpdateRecord]:
        return [e for e in self.events if e.update_kind == kind and (robot_id is None or e.robot_id == robot_id)]


def _initial_belief(rc, cfg: ScenarioConfig, truth: RobotTruth, rng: np.random.Generator):
    ib = rc.initial
    imu = cfg.sensor.imu
    phi = rng.uniform(0.0, 2.0 * np.pi)
    dpsi = rng.standard_normal(3) * ib.attitude_sigma
    dv = rng.standard_normal(3) * ib.velocity_sigma
    r0 = truth.r + ib.position_error * np.array([np.cos(phi), np.sin(phi), 0.0])
    C0, v0 = truth.C.copy(), truth.v.copy()
    if ib.sample_errors:
        C0 = reorthonormalize((np.eye(3) + skew(dpsi)) @ truth.C)
        v0 = v0 + dv
    if ib.position_sigma is not None:
        pos_sig = np.array(ib.position_sigma, dtype=float)
    else:
        pos_sig = np.full(3, max(ib.position_error, 0.1))
    diag = np.concatenate(
        (
            np.full(3, ib.attitude_sigma**2),
            np.full(3, ib.velocity_sigma**2),
            pos_sig**2,
            np.full(3, max(imu.accel_bias_sigma, 1e-9) ** 2),
            np.full(3, max(imu.gyro_bias_sigma, 1e-9) ** 2),
        )
    )
    return NavState(C0, v0, r0, 0.0), np.diag(diag)


def _policy(sp) -> StopPolicy:
    return StopPolicy(StopMode(sp.mode), sp.cov_threshold, sp.period, sp.dwell)


def build_robots(cfg: ScenarioConfig) -> dict[int, RobotSim]:
    imu = cfg.sensor.imu
    dt = 1.0 / imu.rate
    filt = cfg.filter
    ids = [r.id for r in cfg.robots]
    noise = NoiseSpec.from_sample_sigmas(imu.accel_sigma, imu.gyro_sigma, dt, imu.accel_bias_instab, imu.gyro_bias_instab)
    R_zu = np.diag([filt.zu_gyro_sigma**2] * 3 + [filt.zu_vel_sigma**2] * 3)
    robots = {}
    for rc in cfg.robots:
        rng_bias = stream(cfg.seed, rc.id, "bias")
        draw_a = rng_bias.standard_normal(3) * imu.accel_bias_sigma
        draw_g = rng_bias.standard_normal(3) * imu.gyro_bias_sigma
        b_a = draw_a if rc.true_accel_bias is None else np.array(rc.true_accel_bias, dtype=float)
        b_g = draw_g if rc.true_gyro_bias is None else np.array(rc.true_gyro_bias, dtype=float)
        script = MotionScript.from_segments(rc.trajectory.heading_deg, rc.trajectory.segments)
        released = rc.trajectory.start_after_contact is None
        truth = initial_truth(rc.start, script, b_a, b_g, released)
        nav0, P0 = _initial_belief(rc, cfg, truth, stream(cfg.seed, rc.id, "init"))
        acfg = AgentConfig(
            robot_id=rc.id,
            noise=noise,
            stop_policy=_policy(rc.stop_policy),
            zu_enabled=rc.zu_enabled,
            odom_enabled=rc.odom_enabled,
            gnss_enabled=rc.gnss_enabled,
            odom_sigma=max(cfg.sensor.encoder.sigma, 1e-4),
            odom_vertical_sigma=filt.odom_vertical_sigma,
            R_zu=R_zu,
            eps_enc=filt.eps_enc,
            uwb_period=1.0 / cfg.sensor.uwb.rate,
            factor_noise_term=filt.factor_noise_term,
            absent_factor_order=filt.absent_factor_order,
        )
        agent = Agent(acfg, nav0, P0, peers=[i for i in ids if i != rc.id])
        robots[rc.id] = RobotSim(
            rc.id,
            script,
            truth,
            agent,
            rc.trajectory.start_after_contact,
            stream(cfg.seed, rc.id, "imu"),
            stream(cfg.seed, rc.id, "encoder"),
            stream(cfg.seed, rc.id, "gnss"),
            rng_bias,
        )
    return robots


class _Runner:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.robots = build_robots(cfg)
        self.events: list[UpdateRecord] = []
        self.exchanges: list[tuple[float, int, int]] = []
        self.pair_rngs = {tuple(p): pair_stream(cfg.seed, p[0], p[1]) for p in cfg.comm_pairs}
        s = cfg.sensor
        self.rates = {_IMU: s.imu.rate, _ENC: s.encoder.rate, _GNSS: s.gnss.rate, _UWB: s.uwb.rate}
        self.trace_every = max(1, int(round(s.imu.rate / cfg.trace_rate)))
        self.heap: list = []

    # -- scheduling --------------------------------------------------------

    def _push(self, kind: int, k: int, key: int, extra=None):
        t = k / self.rates[kind]
        if t <= self.cfg.duration + 1e-9:
            heapq.heappush(self.heap, (t, kind, key, k, extra))

    def run(self) -> RunArtifacts:
        for rid, rs in self.robots.items():
            self._record(rs, 0.0)
            self._push(_IMU, 1, rid)
            self._push(_ENC, 1, rid)
            if self.cfg.robot(rid).gnss_enabled:
                self._push(_GNSS, 1, rid)
        for n, (a, b) in enumerate(self.cfg.comm_pairs):
            self._push(_UWB, 1, a, (n, a, b))
        while self.heap:
            t, kind, key, k, extra = heapq.heappop(self.heap)
            if kind == _IMU:
                self._imu(t, self.robots[key], k)
            elif kind == _ENC:
                self._encoder(t, self.robots[key])
            elif kind == _GNSS:
                self._gnss(t, self.robots[key])
            else:
                self._uwb(t, extra)
            self._push(kind, k + 1, key, extra)
        return self._artifacts()

    # -- message bus -------------------------------------------------------

    def _deliver(self, rs: RobotSim, event: AgentEvent) -> None:
        queue = deque([(rs.rid, event)])
        while queue:
            rid, ev = queue.popleft()
            target = self.robots[rid]
            n0 = len(target.agent.records)
            out = target.agent.step(ev)
            self._collect(target, n0)
            for msg in out:
                if msg.recipient is None:
                    self._control(target, msg)
                else:
                    queue.append((msg.recipient, msg.as_event()))

    def _collect(self, rs: RobotSim, n0: int) -> None:
        tr = rs.truth
        for rec in rs.agent.records[n0:]:
            if rec.update_kind == "zupt":
                rs.zu_flag = True
                rec.extra.update(v_true=tr.v.copy(), b_a_true=tr.b_a.copy(), b_g_true=tr.b_g.copy())
            elif rec.update_kind in ("range", "range_posterior"):
                rs.rel_peer = rec.peer_id
                self._contact(rs, rec.t)
            self.events.append(rec)

    def _control(self, rs: RobotSim, msg) -> None:
        if msg.kind is EventKind.STOP_COMMAND:
            rs.truth = replace(rs.truth, paused=True)
        elif msg.kind is EventKind.RESUME_COMMAND:
            rs.truth = replace(rs.truth, paused=False)

    def _contact(self, rs: RobotSim, t: float) -> None:
        if rs.contact_time is None:
            rs.contact_time = t

    # -- sensor ticks ------------------------------------------------------

    def _imu(self, t: float, rs: RobotSim, k: int) -> None:
        imu_cfg = self.cfg.sensor.imu
        dt = 1.0 / imu_cfg.rate
        tr = rs.truth
        if not tr.released and rs.contact_time is not None and t >= rs.contact_time + rs.hold_after_contact - 1e-9:
            tr = replace(tr, released=True)
        v_prev = tr.v
        tr = advance_truth(tr, dt, rs.script)
        n = rs.rng_bias.standard_normal(6)
        if imu_cfg.bias_random_walk:
            root = np.sqrt(dt)
            tr = replace(
                tr,
                b_a=tr.b_a + imu_cfg.accel_bias_instab * root * n[:3],
                b_g=tr.b_g + imu_cfg.gyro_bias_instab * root * n[3:],
            )
        rs.truth = tr
        sample = sample_imu(v_prev, tr.v, tr.C, tr.b_a, tr.b_g, dt, imu_cfg, rs.rng_imu)
        self._deliver(rs, AgentEvent(t, EventKind.IMU_TICK, sample))
        if k % self.trace_every == 0:
            self._record(rs, t)

    def _encoder(self, t: float, rs: RobotSim) -> None:
        tr = rs.truth
        speed = float(tr.v @ rs.script.direction)
        cmd_zero = tr.commanded_speed(rs.script) == 0.0
        reading = sample_encoder(speed, cmd_zero, self.cfg.sensor.encoder, rs.rng_enc)
        self._deliver(rs, AgentEvent(t, EventKind.ENCODER_TICK, reading))

    def _gnss(self, t: float, rs: RobotSim) -> None:
        fix = sample_gnss(rs.truth.r, rs.truth.v, self.cfg.sensor.gnss, rs.rng_gnss)
        self._deliver(rs, AgentEvent(t, EventKind.GNSS_TICK, fix))

    def _uwb(self, t: float, extra) -> None:
        _, a, b = extra
        ra, rb = self.robots[a], self.robots[b]
        meas = sample_uwb(
            ra.truth.r, rb.truth.r, self.cfg.sensor.uwb, self.pair_rngs[(a, b)], self.cfg.gate_distance,
            self.cfg.filter.min_range_sigma,
        )
        if meas is None:
            return
        n0 = len(ra.agent.applied)
        self._deliver(ra, AgentEvent(t, EventKind.RANGE_DETECTED, RangeDetection(b, meas)))
        if any(kind == "range" for _, kind in ra.agent.applied[n0:]):
            self.exchanges.append((t, a, b))

    # -- traces ------------------------------------------------------------

    def _record(self, rs: RobotSim, t: float) -> None:
        ag = rs.agent
        nv = ag.nav
        yaw, pitch, roll = euler_from_dcm(nv.C_bn)
        P = ag.belief.P
        rs.trace.append(
            (t, rs.rid, *nv.r_b, *nv.v_ebn, yaw, pitch, roll, P[6, 6], P[7, 7], P[8, 8], int(rs.zu_flag), rs.rel_peer)
        )
        tr = rs.truth
        ty, tp, trl = euler_from_dcm(tr.C)
        rs.truth_trace.append((t, rs.rid, *tr.r, *tr.v, ty, tp, trl))
        rs.bias_trace.append((t, *ag.b_a, *ag.b_g, *tr.b_a, *tr.b_g, *np.diag(P)[9:N_ERR]))
        rs.zu_flag = False
        rs.rel_peer = -1

    def _artifacts(self) -> RunArtifacts:
        beliefs = {rid: np.array(rs.trace, dtype=float) for rid, rs in self.robots.items()}
        truth = {rid: np.array(rs.truth_trace, dtype=float) for rid, rs in self.robots.items()}
        biases = {rid: np.array(rs.bias_trace, dtype=float) for rid, rs in self.robots.items()}
        metrics = compute_metrics(
            {rid: (b[:, 0], b[:, 2:5]) for rid, b in beliefs.items()},
            {rid: (t[:, 0], t[:, 2:5]) for rid, t in truth.items()},
            tol=0.5 / self.cfg.sensor.imu.rate,
        )
        stale = sum(rs.agent.stale_count for rs in self.robots.values())
        return RunArtifacts(
            self.cfg,
            beliefs,
            truth,
            biases,
            self.events,
            self.exchanges,
            metrics,
            {rid: rs.agent for rid, rs in self.robots.items()},
            stale,
        )


def run_scenario(cfg: ScenarioConfig) -> RunArtifacts:
    """Run one scenario to completion and return its traces and metrics."""
    return _Runner(cfg).run()
