import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import expm

from coopnav import nav
from coopnav.nav import (
    BeliefBlock,
    ErrorState,
    ImuSample,
    NavState,
    NoiseSpec,
    attitude_update,
    build_F,
    build_phi,
    build_Q,
    fold_correction,
    mechanize,
    position_update,
    propagate,
    reorthonormalize,
    skew,
    velocity_update,
)

finite3 = arrays(np.float64, 3, elements=st.floats(-5, 5, allow_nan=False))


def _state(C=None, v=None, r=None):
    return NavState.from_arrays(np.eye(3) if C is None else C, np.zeros(3) if v is None else v, np.zeros(3) if r is None else r)


def _random_spd(rng, n=15, scale=1.0):
    A = rng.standard_normal((n, n))
    return scale * (A @ A.T + n * np.eye(n))


@given(finite3, finite3)
def test_skew_matches_cross_product(a, b):
    assert np.allclose(skew(a) @ b, np.cross(a, b), atol=1e-12)


# -- attitude --------------------------------------------------------------


def test_attitude_unchanged_when_rate_equals_bias():
    s = _state(C=nav.dcm_from_yaw(0.3))
    bg = np.array([0.01, -0.02, 0.03])
    out = attitude_update(s, ImuSample(np.zeros(3), bg.copy(), 0.02), bg)
    assert np.allclose(out.C_bn, s.C_bn, atol=1e-15)


def test_attitude_quarter_turn_rate_first_order():
    imu = ImuSample(np.zeros(3), np.array([0.0, 0.0, np.pi / 2]), 0.02)
    C_raw = np.eye(3) @ (np.eye(3) + skew(imu.omega_imu) * imu.dt_i)
    assert C_raw[0, 1] == pytest.approx(-np.pi / 2 * 0.02)
    out = attitude_update(_state(), imu, np.zeros(3))
    exact = expm(skew(imu.omega_imu) * imu.dt_i)
    assert np.linalg.norm(out.C_bn - exact) < (np.pi / 2 * 0.02) ** 2
    assert np.arctan2(out.C_bn[1, 0], out.C_bn[0, 0]) == pytest.approx(0.0314159, abs=2e-5)


def test_imu_rate_matches_fifty_hertz():
    assert 1.0 / 50.0 == 0.02


def test_orthonormality_after_many_updates():
    rng = np.random.default_rng(7)
    C = np.eye(3)
    dt = 0.02
    rates = rng.uniform(-1.0, 1.0, (1_000_000, 3))
    # same first-order step and Gram-Schmidt as attitude_update, unrolled for speed
    for w in rates:
        C = reorthonormalize(C @ (np.eye(3) + skew(w) * dt))
    assert np.linalg.norm(C.T @ C - np.eye(3)) < 1e-9
    assert np.linalg.det(C) == pytest.approx(1.0, abs=1e-9)


# -- velocity / position ---------------------------------------------------


def test_velocity_gravity_cancels():
    s = _state(v=[0.1, 0.2, 0.0])
    out = velocity_update(s, ImuSample(np.array([0.0, 0.0, 9.81]), np.zeros(3), 0.02), np.zeros(3))
    assert np.allclose(out.v_ebn, s.v_ebn, atol=1e-15)


def test_gravity_constant():
    assert np.array_equal(nav.GRAVITY_ENU, [0.0, 0.0, -9.81])


def test_velocity_hand_arithmetic():
    s = _state(v=[0.2, 0.0, 0.0])
    out = velocity_update(s, ImuSample(np.array([0.1, 0.0, 9.81]), np.zeros(3), 0.02), np.zeros(3))
    assert out.v_ebn[0] == pytest.approx(0.2 + 0.1 * 0.02, abs=1e-15)
    assert out.v_ebn[1] == 0.0
    assert abs(out.v_ebn[2]) < 1e-15


def test_velocity_uses_start_of_cycle_dcm():
    s = _state(C=nav.dcm_from_yaw(np.pi / 2))
    imu = ImuSample(np.array([1.0, 0.0, 9.81]), np.zeros(3), 0.1)
    out = velocity_update(s, imu, np.zeros(3), C_bn_prev=np.eye(3))
    assert np.allclose(out.v_ebn, [0.1, 0.0, 0.0], atol=1e-12)


@pytest.mark.parametrize(
    "v_minus, v_plus, expected",
    [
        ([0, 0, 0], [0, 0, 0], [0, 0, 0]),
        ([0.2, 0, 0], [0.2, 0, 0], [0.004, 0, 0]),
        ([0.0, 0, 0], [0.2, 0, 0], [0.002, 0, 0]),
    ],
)
def test_position_trapezoid(v_minus, v_plus, expected):
    out = position_update(_state(v=v_plus), np.array(v_minus, dtype=float), 0.02)
    assert np.allclose(out.r_b, expected, atol=1e-15)


def test_ten_seconds_constant_velocity():
    s = _state(v=[0.2, 0.0, 0.0])
    imu = ImuSample(np.array([0.0, 0.0, 9.81]), np.zeros(3), 0.02)
    for _ in range(500):
        s = mechanize(s, imu, np.zeros(3), np.zeros(3))
    assert s.r_b[0] == pytest.approx(2.0, abs=1e-12)
    assert s.t == pytest.approx(10.0)


def test_noiseless_round_trip_on_smooth_trajectory():
    """Perfect IMU data from a curved trajectory reproduces position to 1e-3 m over 60 s."""
    dt, n = 0.02, 3000
    C = np.eye(3)
    v = np.zeros(3)
    r = np.zeros(3)
    est = _state()
    for k in range(n):
        t = k * dt
        w = np.array([0.0, 0.0, 0.1 * np.sin(0.2 * t)])
        a_n = np.array([0.05 * np.cos(0.3 * t), 0.04 * np.sin(0.1 * t), 0.0])
        C_new = reorthonormalize(C @ (np.eye(3) + skew(w) * dt))
        v_new = v + a_n * dt
        f_b = C.T @ (a_n - nav.GRAVITY_ENU)
        r = r + 0.5 * dt * (v + v_new)
        C, v = C_new, v_new
        est = mechanize(est, ImuSample(f_b, w, dt), np.zeros(3), np.zeros(3))
    assert np.linalg.norm(est.r_b - r) < 1e-3
    assert np.linalg.norm(est.C_bn - C) < 1e-9


def test_imu_sample_rejects_nonpositive_dt():
    with pytest.raises(ValueError):
        ImuSample(np.zeros(3), np.zeros(3), 0.0)


def test_noise_spec_rejects_negative():
    with pytest.raises(ValueError):
        NoiseSpec(-1.0, 0.0, 0.0, 0.0)


# -- F, Phi, Q -------------------------------------------------------------


def test_F_blocks_with_zero_accel():
    F = build_F(np.eye(3), np.zeros(3))
    expected = np.zeros((15, 15))
    expected[0:3, 12:15] = np.eye(3)
    expected[3:6, 9:12] = np.eye(3)
    expected[6:9, 3:6] = np.eye(3)
    assert np.array_equal(F, expected)


@given(finite3)
def test_F_specific_force_block_is_skew(a):
    F = build_F(nav.dcm_from_yaw(0.4), a)
    blk = F[3:6, 0:3]
    assert np.allclose(blk.T, -blk)


def test_F_gravity_entries():
    F = build_F(np.eye(3), np.array([0.0, 0.0, 9.81]))
    assert F[3, 1] == pytest.approx(9.81)
    assert F[4, 0] == pytest.approx(-9.81)


def test_phi_is_exactly_identity_plus_F_dt():
    rng = np.random.default_rng(1)
    F = build_F(nav.dcm_from_yaw(1.0), rng.standard_normal(3))
    assert np.array_equal(build_phi(F, 0.02), np.eye(15) + F * 0.02)
    assert np.array_equal(build_phi(np.zeros((15, 15)), 0.02), np.eye(15))
    F2 = np.zeros((15, 15))
    F2[6, 3] = 1.0
    assert build_phi(F2, 0.02)[6, 3] == 0.02


@pytest.mark.parametrize("dt", [0.02, 0.01, 0.005])
def test_phi_first_order_accuracy(dt):
    F = build_F(nav.dcm_from_yaw(0.7), np.array([0.1, -0.05, 9.81]))
    err = np.linalg.norm(build_phi(F, dt) - expm(F * dt))
    assert err <= np.linalg.norm(F) ** 2 * dt**2


def test_phi_rejects_bad_dt():
    with pytest.raises(ValueError):
        build_phi(np.zeros((15, 15)), 0.0)


def test_Q_layout_and_scaling():
    noise = NoiseSpec(arw=1e-3, vrw=2e-3, gyro_bias_instab=3e-5, accel_bias_instab=4e-4)
    Q = build_Q(noise, 0.02)
    assert np.array_equal(Q, np.diag(np.diag(Q)))
    d = np.diag(Q)
    assert np.allclose(d[0:3], 1e-6 * 0.02)
    assert np.allclose(d[3:6], 4e-6 * 0.02)
    assert np.all(d[6:9] == 0)
    assert np.allclose(d[9:12], 16e-8 * 0.02)
    assert np.allclose(d[12:15], 9e-10 * 0.02)
    assert np.allclose(build_Q(noise, 0.04), 2 * Q)
    assert not np.any(build_Q(NoiseSpec(0, 0, 0, 0), 0.02))


def test_noise_from_sample_sigmas():
    n = NoiseSpec.from_sample_sigmas(0.001, 0.002, 0.02)
    assert n.vrw == pytest.approx(0.001 * np.sqrt(0.02))
    assert n.arw == pytest.approx(0.002 * np.sqrt(0.02))


# -- propagate -------------------------------------------------------------


def test_propagate_identity_keeps_belief():
    rng = np.random.default_rng(2)
    P = _random_spd(rng)
    b = BeliefBlock(P, 0, {1: rng.standard_normal((15, 15))})
    err = ErrorState(rng.standard_normal(15))
    b2, e2 = propagate(b, err, np.eye(15), np.zeros((15, 15)))
    assert np.allclose(b2.P, P)
    assert np.array_equal(b2.sigma[1], b.sigma[1])
    assert np.array_equal(e2.x, err.x)


def test_propagate_zero_error_stays_zero():
    F = build_F(np.eye(3), np.array([0.0, 0.0, 9.81]))
    _, e = propagate(BeliefBlock.initial(0, np.eye(15)), ErrorState(), build_phi(F, 0.02), np.eye(15) * 1e-6)
    assert not np.any(e.x)


def test_propagate_trace_grows_with_noise():
    P = np.eye(15)
    b2, _ = propagate(BeliefBlock(P, 0), ErrorState(), np.eye(15), np.eye(15) * 1e-4)
    assert np.trace(b2.P) >= np.trace(P)


def test_propagate_keeps_symmetry_and_psd_over_many_steps():
    rng = np.random.default_rng(3)
    noise = NoiseSpec(1e-3, 1e-3, 1e-5, 1e-4)
    b = BeliefBlock.initial(0, np.diag(rng.uniform(1e-4, 1.0, 15)))
    err = ErrorState()
    C = np.eye(3)
    for _ in range(10_000):
        C = reorthonormalize(C @ (np.eye(3) + skew(rng.normal(0, 0.1, 3)) * 0.02))
        F = build_F(C, rng.normal(0, 0.5, 3) + [0, 0, 9.81])
        b, err = propagate(b, err, build_phi(F, 0.02), build_Q(noise, 0.02))
    assert np.max(np.abs(b.P - b.P.T)) < 1e-10
    assert np.linalg.eigvalsh(b.P).min() > -1e-9 * np.trace(b.P)


def test_factor_propagation_commutes_with_cross_covariance():
    rng = np.random.default_rng(4)
    s_ab, s_ba = rng.standard_normal((15, 15)), rng.standard_normal((15, 15))
    phi_a = build_phi(build_F(nav.dcm_from_yaw(0.2), rng.standard_normal(3)), 0.02)
    phi_b = build_phi(build_F(nav.dcm_from_yaw(-1.1), rng.standard_normal(3)), 0.02)
    A, _ = propagate(BeliefBlock(np.eye(15), 0, {1: s_ab}), ErrorState(), phi_a, np.zeros((15, 15)))
    B, _ = propagate(BeliefBlock(np.eye(15), 1, {0: s_ba}), ErrorState(), phi_b, np.zeros((15, 15)))
    lhs = phi_a @ (s_ab @ s_ba.T) @ phi_b.T
    rhs = A.sigma[1] @ B.sigma[0].T
    assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1.0, np.max(np.abs(lhs)))


# -- fold ------------------------------------------------------------------


def test_fold_zero_error_is_noop():
    s = _state(C=nav.dcm_from_yaw(0.5), v=[1, 2, 3], r=[4, 5, 6])
    out, e, (ba, bg) = fold_correction(s, ErrorState(), (np.ones(3), np.ones(3)))
    assert np.array_equal(out.C_bn, s.C_bn)
    assert np.array_equal(out.r_b, s.r_b)
    assert not np.any(e.x)
    assert np.array_equal(ba, np.ones(3))


def test_fold_subtracts_position_error_and_resets():
    x = np.zeros(15)
    x[6] = 0.1
    out, e, _ = fold_correction(_state(r=[1.0, 0, 0]), ErrorState(x), (np.zeros(3), np.zeros(3)))
    assert out.r_b[0] == pytest.approx(0.9)
    assert not np.any(e.x)
    again, e2, _ = fold_correction(out, e, (np.zeros(3), np.zeros(3)))
    assert np.array_equal(again.r_b, out.r_b)


def test_fold_sign_convention_is_estimate_minus_truth():
    """An error built as estimate-minus-truth is removed exactly by the fold."""
    C_true = nav.dcm_from_yaw(0.3)
    dpsi = np.array([1e-4, -2e-4, 3e-4])
    C_est = (np.eye(3) + skew(dpsi)) @ C_true
    x = np.concatenate((dpsi, [0.01, 0, 0], [0, 0.02, 0], [1e-3, 0, 0], [0, 0, 1e-4]))
    est = NavState(C_est, np.array([0.21, 0, 0]), np.array([0, 1.02, 0]))
    out, _, (ba, bg) = fold_correction(est, ErrorState(x), (np.zeros(3), np.zeros(3)))
    assert np.linalg.norm(out.C_bn - C_true) < 1e-7
    assert np.allclose(out.v_ebn, [0.2, 0, 0])
    assert np.allclose(out.r_b, [0, 1.0, 0])
    assert ba[0] == pytest.approx(1e-3) and bg[2] == pytest.approx(1e-4)


def test_fold_rejects_nonfinite():
    x = np.zeros(15)
    x[0] = np.nan
    with pytest.raises(ValueError):
        fold_correction(_state(), ErrorState(x), (np.zeros(3), np.zeros(3)))


@settings(max_examples=50)
@given(arrays(np.float64, 15, elements=st.floats(-1e-2, 1e-2, allow_nan=False)))
def test_fold_keeps_dcm_orthonormal(x):
    out, _, _ = fold_correction(_state(C=nav.dcm_from_yaw(1.0)), ErrorState(x), (np.zeros(3), np.zeros(3)))
    assert np.linalg.norm(out.C_bn.T @ out.C_bn - np.eye(3)) < 1e-9


def test_error_state_views():
    e = ErrorState(np.arange(15.0))
    assert np.array_equal(e.dpsi, [0, 1, 2])
    assert np.array_equal(e.dv, [3, 4, 5])
    assert np.array_equal(e.dr, [6, 7, 8])
    assert np.array_equal(e.b_a, [9, 10, 11])
    assert np.array_equal(e.b_g, [12, 13, 14])
    assert not np.any(ErrorState.zero().x)


def test_belief_initial_has_zero_factor_per_peer():
    b = BeliefBlock.initial(1, np.eye(15), peers=[0, 1, 2])
    assert set(b.sigma) == {0, 2}
    assert all(not np.any(s) for s in b.sigma.values())
