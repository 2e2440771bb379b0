import numpy as np
import pytest

from coopnav import nav
from coopnav.agent import (
    Agent,
    AgentConfig,
    AgentEvent,
    EncoderReading,
    EventKind,
    GnssFix,
    Message,
    MotionStatus,
    RangeDetection,
    StopDecision,
    StopHistory,
    StopMode,
    StopPolicy,
    detect_stationary,
    max_position_variance,
    stop_decision,
)
from coopnav.errors import ProtocolViolation
from coopnav.nav import ImuSample, NavState, NoiseSpec
from coopnav.relative import RangeMeasurement

DT = 0.02
NOISE = NoiseSpec(arw=1e-4, vrw=1e-4, gyro_bias_instab=1e-6, accel_bias_instab=1e-5)
STILL = ImuSample(np.array([0.0, 0.0, 9.81]), np.zeros(3), DT)


def _P0(pos_sigma=0.1):
    sig = np.concatenate((np.full(3, 1e-3), np.full(3, 0.01), np.full(3, pos_sigma), np.full(3, 5e-3), np.full(3, 5e-4)))
    return np.diag(sig**2)


def _agent(rid=0, peers=(), r=(0.0, 0.0, 0.0), **kw):
    cfg = AgentConfig(robot_id=rid, noise=kw.pop("noise", NOISE), **kw)
    return Agent(cfg, NavState(np.eye(3), np.zeros(3), np.array(r, dtype=float)), _P0(kw.get("pos_sigma", 0.1)), peers=peers)


def _imu(t):
    return AgentEvent(t, EventKind.IMU_TICK, STILL)


def _enc(t, speed=0.0, cmd_zero=True):
    return AgentEvent(t, EventKind.ENCODER_TICK, EncoderReading(speed, cmd_zero))


# -- stationary detection --------------------------------------------------


def test_motion_status_invariant():
    s = MotionStatus().refresh(True, 0.0, 1.0, 1e-3)
    assert s.stationary_since == 1.0
    assert s.refresh(True, 0.0, 1.5, 1e-3).stationary_since == 1.0
    assert s.refresh(False, 0.0, 1.5, 1e-3).stationary_since is None
    assert s.refresh(True, 0.2, 1.5, 1e-3).stationary_since is None


@pytest.mark.parametrize(
    "cmd_zero, speed, since, now, expected",
    [
        (False, 0.2, None, 5.0, False),
        (True, 0.0, 1.0, 1.6, True),
        (True, 0.0, 1.0, 1.3, False),
        (True, 0.0, 1.0, 1.5, True),
    ],
)
def test_detect_stationary(cmd_zero, speed, since, now, expected):
    status = MotionStatus(cmd_zero, speed, since)
    assert detect_stationary(status, now, 0.5) is expected


# -- stop decision ---------------------------------------------------------


def _P_with_pos(d):
    P = np.eye(15) * 1e-4
    P[6, 6], P[7, 7], P[8, 8] = d
    return P


def test_stop_decision_default_threshold():
    pol = StopPolicy(StopMode.AUTONOMOUS, cov_threshold=5.0)
    assert stop_decision(_P_with_pos([5.2, 0.1, 0.1]), pol) is StopDecision.ISSUE_STOP
    assert stop_decision(_P_with_pos([5.0, 4.9, 0.1]), pol) is StopDecision.CONTINUE


def test_stop_decision_indoor_threshold():
    pol = StopPolicy(StopMode.AUTONOMOUS, cov_threshold=2.0)
    assert stop_decision(_P_with_pos([0.1, 0.1, 2.1]), pol) is StopDecision.ISSUE_STOP


def test_stop_decision_modes():
    P = _P_with_pos([9.0, 0.0, 0.0])
    assert stop_decision(P, StopPolicy(StopMode.NONE)) is StopDecision.CONTINUE
    assert stop_decision(P, StopPolicy(StopMode.AUTONOMOUS), StopHistory(armed=False)) is StopDecision.CONTINUE
    per = StopPolicy(StopMode.PERIODIC, period=10.0)
    assert stop_decision(P, per, StopHistory(motion_since_resume=9.9)) is StopDecision.CONTINUE
    assert stop_decision(P, per, StopHistory(motion_since_resume=10.0)) is StopDecision.ISSUE_STOP
    atp = StopPolicy(StopMode.AUTO_THEN_PERIODIC, period=10.0)
    small = _P_with_pos([0.1, 0.1, 0.1])
    assert stop_decision(small, atp, StopHistory(periodic_active=True, motion_since_resume=10.0)) is StopDecision.ISSUE_STOP
    assert stop_decision(small, atp, StopHistory(periodic_active=False, motion_since_resume=10.0)) is StopDecision.CONTINUE


def test_max_position_variance_ignores_other_states():
    P = np.eye(15) * 100
    P[6:9, 6:9] = np.diag([1.0, 2.0, 3.0])
    assert max_position_variance(P) == 3.0


@pytest.mark.parametrize("kw", [{"cov_threshold": 0.0}, {"dwell": 0.0}, {"period": -1.0}])
def test_stop_policy_validation(kw):
    with pytest.raises(ValueError):
        StopPolicy(StopMode.AUTONOMOUS, **kw)


# -- stepping --------------------------------------------------------------


def test_imu_tick_with_zero_noise_keeps_belief():
    ag = _agent(noise=NoiseSpec(0, 0, 0, 0))
    P = ag.belief.P.copy()
    ag.step(_imu(DT))
    # the still robot's F couples only through gravity and zero velocity
    assert np.allclose(ag.belief.P[6:9, 6:9], P[6:9, 6:9] + DT**2 * P[3:6, 3:6], rtol=1e-9, atol=1e-15)
    assert np.allclose(ag.nav.r_b, 0.0)
    assert ag.nav.t == pytest.approx(DT)


def test_stop_zu_resume_cycle_one_zu_per_dwell():
    """Scripted 10 s trace: a single external stop of 2.1 s gives four ZUs."""
    ag = _agent(zu_enabled=True, stop_policy=StopPolicy(StopMode.NONE, dwell=0.5))
    enc_period = 1.0 / 30.0
    t_stop, t_go = 3.0, 5.1
    out = []
    k_enc = 1
    for k in range(1, 501):
        t = k * DT
        if abs(t - t_stop) < 1e-9:
            ag.step(AgentEvent(t, EventKind.STOP_COMMAND))
        if abs(t - t_go) < 1e-9:
            ag.step(AgentEvent(t, EventKind.RESUME_COMMAND))
        out += ag.step(_imu(t))
        while k_enc * enc_period <= t + 1e-12:
            te = k_enc * enc_period
            stopped = t_stop <= te < t_go
            out += ag.step(_enc(te, 0.0 if stopped else 0.2, cmd_zero=stopped))
            k_enc += 1
    zus = [r.t for r in ag.records if r.update_kind == "zupt"]
    assert len(zus) == int((t_go - t_stop) // 0.5)
    assert np.all(np.diff(zus) >= 0.5 - 1e-9)
    assert not any(m.kind is EventKind.RESUME_COMMAND for m in out)


def test_autonomous_stop_emits_stop_then_resume_after_zu():
    ag = _agent(zu_enabled=True, stop_policy=StopPolicy(StopMode.AUTONOMOUS, cov_threshold=0.02, dwell=0.5))
    ag.belief = ag.belief.with_(P=_P0(0.2))
    msgs = ag.step(_imu(DT))
    assert [m.kind for m in msgs] == [EventKind.STOP_COMMAND]
    assert msgs[0].recipient is None
    assert ag.step(_imu(2 * DT)) == []
    t = 2 * DT
    got = []
    while not got and t < 2.0:
        t += 1.0 / 30.0
        got = ag.step(_enc(t))
    assert [m.kind for m in got] == [EventKind.RESUME_COMMAND]
    assert t >= 0.5
    assert ag.zu_count == 1


def test_false_positive_guard_resets_timer():
    ag = _agent(zu_enabled=True)
    ag.step(AgentEvent(0.0, EventKind.STOP_COMMAND))
    ag.step(_enc(0.1))
    ag.step(_enc(0.4))
    ag.step(_enc(0.45, speed=0.05))  # wheels slipped
    ag.step(_enc(0.7))
    assert ag.zu_count == 0
    ag.step(_enc(1.2))
    assert ag.zu_count == 1


def test_zu_contracts_velocity_error():
    ag = _agent(zu_enabled=True)
    ag.nav = ag.nav.replace(v_ebn=np.array([0.03, -0.02, 0.01]))
    ag.step(AgentEvent(0.0, EventKind.STOP_COMMAND))
    for t in (0.1, 0.3, 0.61):
        ag.step(_enc(t))
    rec = [r for r in ag.records if r.update_kind == "zupt"][0]
    assert np.linalg.norm(rec.extra["v_after"]) < np.linalg.norm(rec.extra["v_before"])
    assert np.linalg.norm(rec.extra["v_after"]) < 1e-3


def test_zu_disabled_never_fires():
    ag = _agent(zu_enabled=False)
    ag.step(AgentEvent(0.0, EventKind.STOP_COMMAND))
    for t in np.arange(0.1, 3.0, 0.1):
        ag.step(_enc(float(t)))
    assert ag.zu_count == 0


def test_gnss_update_only_when_enabled():
    fix = GnssFix(np.array([0.5, 0, 0]), np.zeros(3), np.diag([4e-4] * 3 + [1e-2] * 3))
    off = _agent(gnss_enabled=False)
    off.step(AgentEvent(1.0, EventKind.GNSS_TICK, fix))
    assert not off.records
    on = _agent(gnss_enabled=True)
    on.step(AgentEvent(1.0, EventKind.GNSS_TICK, fix))
    assert on.records[-1].update_kind == "gnss"
    assert 0.0 < on.nav.r_b[0] < 0.5


def test_stale_event_dropped_and_counted():
    ag = _agent()
    ag.step(_imu(1.0))
    assert ag.step(_imu(0.5)) == []
    assert ag.stale_count == 1
    assert ag.nav.t == pytest.approx(DT)


def test_posterior_while_not_frozen_is_protocol_violation():
    ag = _agent(peers=[1])
    with pytest.raises(ProtocolViolation):
        ag.step(AgentEvent(1.0, EventKind.PEER_POSTERIOR, None, 1))
    with pytest.raises(ProtocolViolation):
        ag.step(AgentEvent(1.0, EventKind.PEER_BELIEF, None, 1))


# -- handshake -------------------------------------------------------------


def _bus(agents, first, event, log=None):
    queue = [(first, event)]
    while queue:
        rid, ev = queue.pop(0)
        for m in agents[rid].step(ev):
            if log is not None:
                log.append(m)
            if m.recipient is not None:
                queue.append((m.recipient, m.as_event()))


def _pair():
    a = _agent(0, peers=[1], r=(0.0, 0.0, 0.0), odom_enabled=False)
    b = _agent(1, peers=[0], r=(1.5, 0.0, 0.0), odom_enabled=False)
    b.belief = b.belief.with_(P=_P0(3.0))
    return {0: a, 1: b}


def test_handshake_message_sequence_and_posterior():
    ags = _pair()
    log = []
    _bus(ags, 0, AgentEvent(1.0, EventKind.RANGE_DETECTED, RangeDetection(1, RangeMeasurement(1.2, 0.05**2))), log)
    assert [m.kind for m in log] == [EventKind.PEER_REQUEST, EventKind.PEER_BELIEF, EventKind.PEER_POSTERIOR]
    a, b = ags[0], ags[1]
    assert not a.frozen and not b.frozen
    assert [r.update_kind for r in a.records] == ["range"]
    assert [r.update_kind for r in b.records] == ["range_posterior"]
    # B was far less certain, so it moved most of the way toward the range
    assert b.nav.r_b[0] < 1.5 - 0.2
    assert np.allclose(a.belief.sigma[1], np.eye(15))
    cross = a.belief.sigma[1] @ b.belief.sigma[0].T
    assert np.abs(cross).max() > 0


def test_range_rate_limited_per_pair():
    ags = _pair()
    for t in (1.0, 1.5, 2.0):
        _bus(ags, 0, AgentEvent(t, EventKind.RANGE_DETECTED, RangeDetection(1, RangeMeasurement(1.5, 0.05**2))))
    assert [r.t for r in ags[0].records] == [1.0, 2.0]


def test_frozen_agent_buffers_and_replays_in_order():
    ags = _pair()
    a, b = ags[0], ags[1]
    req = a.step(AgentEvent(1.0, EventKind.RANGE_DETECTED, RangeDetection(1, RangeMeasurement(1.4, 0.05**2))))
    reply = b.step(req[0].as_event())
    assert b.frozen
    n_before = len(b.applied)
    t_before = b.nav.t
    for k in range(1, 4):
        assert b.step(_imu(1.0 + k * DT)) == []
    assert b.nav.t == t_before and len(b.applied) == n_before
    post = a.step(reply[0].as_event())
    b.step(post[0].as_event())
    assert not b.frozen
    assert [k for _, k in b.applied][-1] == "range_posterior"
    assert b.nav.t == pytest.approx(t_before + 3 * DT)


def test_peer_request_while_frozen_is_buffered():
    ags = _pair()
    a, b = ags[0], ags[1]
    req = a.step(AgentEvent(1.0, EventKind.RANGE_DETECTED, RangeDetection(1, RangeMeasurement(1.4, 0.05**2))))
    assert a.frozen
    assert a.step(AgentEvent(1.0, EventKind.PEER_REQUEST, None, 2)) == []
    reply = b.step(req[0].as_event())
    out = a.step(reply[0].as_event())
    kinds = [m.kind for m in out]
    assert kinds[0] is EventKind.PEER_POSTERIOR
    assert EventKind.PEER_BELIEF in kinds
    assert a.frozen  # now serving robot 2


def test_message_as_event_round_trip():
    m = Message(2.0, EventKind.PEER_REQUEST, 3, 1)
    ev = m.as_event()
    assert (ev.t, ev.kind, ev.sender) == (2.0, EventKind.PEER_REQUEST, 3)


def test_identical_streams_are_bit_identical():
    def run():
        ags = _pair()
        rng = np.random.default_rng(0)
        for k in range(1, 200):
            t = k * DT
            for rid in (0, 1):
                imu = ImuSample(np.array([0, 0, 9.81]) + rng.normal(0, 1e-3, 3), rng.normal(0, 1e-3, 3), DT)
                _bus(ags, rid, AgentEvent(t, EventKind.IMU_TICK, imu))
            if k % 50 == 0:
                _bus(ags, 0, AgentEvent(t, EventKind.RANGE_DETECTED, RangeDetection(1, RangeMeasurement(1.5, 0.05**2))))
        return np.concatenate([ags[i].belief.P.ravel() for i in (0, 1)] + [ags[i].nav.r_b for i in (0, 1)])

    assert run().tobytes() == run().tobytes()
