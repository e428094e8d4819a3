import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msfspoof.msf_core import (FusionFilter, KfConfig, Measurement, MsfState, NumericInputError,
                               OutlierPolicy, Source, chi_squared, predict, process_measurement, update)
from msfspoof.vehicle import TransitionModel
from msfspoof import _kernels

Q = np.diag([1e-4, 1e-4, 0.02, 0.02, 1e-4])
CFG = KfConfig(Q)


def state(pos=(0.0, 0.0), vel=(0.0, 0.0), heading=0.0, P=None, t=0.0):
    return MsfState(pos, vel, heading, np.eye(5) * 0.1 if P is None else P, t)


def gps(z, var=(0.01, 0.01)):
    return Measurement(Source.GPS, z, np.diag(var))


def random_spd(rng, n=5, scale=1.0):
    A = rng.normal(size=(n, n))
    return scale * (A @ A.T / n + 0.05 * np.eye(n))


finite = st.floats(-50, 50, allow_nan=False)
pos_var = st.floats(1e-4, 10.0)


# -- prediction ------------------------------------------------------------------

def test_zero_motion_predict_only_grows_covariance():
    s = state()
    out = predict(s, TransitionModel((0.0, 0.0), 0.0, 0.5), CFG)
    np.testing.assert_array_equal(out.position, s.position)
    # at rest with zero accel the Jacobian is the identity except the dt couplings
    F = np.eye(5)
    F[0, 2] = F[1, 3] = 0.5
    np.testing.assert_allclose(out.covariance, F @ s.covariance @ F.T + Q * 0.5, atol=1e-15)
    assert out.timestamp == pytest.approx(0.5)


def test_identity_transition_without_noise_is_a_no_op():
    # zero velocity and a vanishing dt make F the identity; with Q = 0 nothing moves
    cfg = KfConfig(np.zeros((5, 5)))
    P = np.diag([1.0, 2.0, 0.0, 0.0, 3.0])
    s = state(P=P)
    out = predict(s, TransitionModel((0.0, 0.0), 0.0, 1e-300), cfg)
    np.testing.assert_array_equal(out.vector, s.vector)
    np.testing.assert_allclose(out.covariance, P, atol=1e-290)


def test_one_dimensional_reduction():
    s = state(vel=(1.0, 0.0), P=np.eye(5))
    out = predict(s, TransitionModel((0.0, 0.0), 0.0, 1.0), KfConfig(np.zeros((5, 5))))
    assert out.position[0] == pytest.approx(1.0)
    F2 = np.array([[1.0, 1.0], [0.0, 1.0]])
    np.testing.assert_allclose(out.covariance[np.ix_([0, 2], [0, 2])], F2 @ F2.T)


def test_predict_rejects_non_finite_input():
    with pytest.raises(NumericInputError):
        predict(state(vel=(math.nan, 0.0)), TransitionModel((0.0, 0.0), 0.0, 0.1), CFG)
    with pytest.raises(ValueError):
        TransitionModel((math.inf, 0.0), 0.0, 0.1)


def test_predict_rotates_body_acceleration():
    s = state(heading=math.pi / 2)
    out = predict(s, TransitionModel((1.0, 0.0), 0.0, 1.0), CFG)
    np.testing.assert_allclose(out.velocity, [0.0, 1.0], atol=1e-12)


# -- update ----------------------------------------------------------------------

def test_huge_measurement_noise_leaves_state_unchanged():
    s = state(pos=(1.0, 2.0))
    out, _ = update(s, gps((5.0, -3.0), (1e12, 1e12)), CFG)
    np.testing.assert_allclose(out.vector, s.vector, atol=1e-6)


def test_scalar_update_by_hand():
    # embed the scalar problem x=0, P=1, z=1, R=1 in the first axis
    P = np.diag([1.0, 1.0, 1.0, 1.0, 1.0])
    out, log = update(state(P=P), gps((1.0, 0.0), (1.0, 1.0)), CFG)
    assert log.kalman_gain[0, 0] == pytest.approx(0.5)
    assert out.position[0] == pytest.approx(0.5)
    assert out.covariance[0, 0] == pytest.approx(0.5)


def test_zero_innovation_still_contracts():
    s = state(pos=(3.0, 4.0))
    out, log = update(s, gps((3.0, 4.0)), CFG)
    np.testing.assert_array_equal(out.position, s.position)
    assert np.trace(out.covariance) < np.trace(s.covariance)
    assert log.chi2 == 0.0


def test_singular_innovation_covariance_raises():
    # perfectly correlated, enormous position uncertainty: S is rank one to machine precision
    P = np.zeros((5, 5))
    P[:2, :2] = 1e20
    with pytest.raises(np.linalg.LinAlgError):
        update(state(P=P), gps((0.0, 0.0), (1e-3, 1e-3)), CFG)
    with pytest.raises(np.linalg.LinAlgError):
        chi_squared(state(P=P), gps((0.0, 0.0), (1e-3, 1e-3)), CFG)


def test_measurement_variances_must_be_positive():
    with pytest.raises(ValueError):
        gps((0.0, 0.0), (0.0, 1.0))


# -- chi-squared gate --------------------------------------------------------------

def test_chi_squared_zero_for_exact_measurement():
    assert chi_squared(state(pos=(2.0, 1.0)), gps((2.0, 1.0)), CFG) == 0.0


def test_chi_squared_scalar_example():
    # S = P + R = 0.5 + 0.5 = 1 along x, residual 2 -> 4
    P = np.diag([0.5, 0.5, 1.0, 1.0, 1.0])
    chi2 = chi_squared(state(P=P), gps((2.0, 0.0), (0.5, 0.5)), CFG)
    assert chi2 == pytest.approx(4.0)
    assert chi2 > CFG.chi2_threshold


@given(c=st.floats(0.1, 10.0))
def test_chi_squared_is_quadratic_in_residual(c):
    P = np.diag([0.3, 0.7, 1.0, 1.0, 1.0])
    base = chi_squared(state(P=P), gps((0.4, -0.2)), CFG)
    scaled = chi_squared(state(P=P), gps((0.4 * c, -0.2 * c)), CFG)
    assert scaled == pytest.approx(c * c * base, rel=1e-9)


def _gate_inputs():
    # chi2 = 4.2 > 3.841 along x with S = 1
    P = np.diag([0.5, 0.5, 1.0, 1.0, 1.0])
    return state(P=P), gps((math.sqrt(4.2), 0.0), (0.5, 0.5))


def test_discard_policy_leaves_state_identical():
    s, m = _gate_inputs()
    out, log = process_measurement(s, m, CFG)
    assert log.chi2 == pytest.approx(4.2)
    assert not log.accepted
    assert out is s


def test_gate_pass_matches_update():
    P = np.diag([0.5, 0.5, 1.0, 1.0, 1.0])
    s, m = state(P=P), gps((math.sqrt(0.5), 0.0), (0.5, 0.5))
    out, log = process_measurement(s, m, CFG)
    ref, _ = update(s, m, CFG)
    assert log.accepted
    np.testing.assert_array_equal(out.vector, ref.vector)
    np.testing.assert_array_equal(out.covariance, ref.covariance)


def test_partial_policy_moves_half_as_far():
    s, m = _gate_inputs()
    cfg = CFG.with_policy(OutlierPolicy.PARTIAL, 0.5)
    out, log = process_measurement(s, m, cfg)
    full, _ = update(s, m, CFG)
    assert not log.accepted
    np.testing.assert_allclose(out.vector - s.vector, 0.5 * (full.vector - s.vector), atol=1e-15)


def test_config_validation():
    with pytest.raises(ValueError):
        KfConfig(Q, chi2_threshold=0.0)
    with pytest.raises(ValueError):
        KfConfig(Q, outlier_policy=OutlierPolicy.PARTIAL, partial_weight=1.0)


# -- properties ----------------------------------------------------------------------

def _assert_psd(P):
    assert np.max(np.abs(P - P.T)) <= 1e-12
    assert np.min(np.linalg.eigvalsh(P)) >= -1e-9


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), ax=finite, ay=finite, w=st.floats(-1, 1), dt=st.floats(1e-3, 0.1),
       rx=pos_var, ry=pos_var, zx=finite, zy=finite)
def test_covariance_stays_symmetric_psd(seed, ax, ay, w, dt, rx, ry, zx, zy):
    rng = np.random.Generator(np.random.PCG64(seed))
    s = MsfState(rng.normal(size=2), rng.normal(size=2), rng.uniform(-3, 3), random_spd(rng))
    s = predict(s, TransitionModel((ax, ay), w, dt), CFG)
    _assert_psd(s.covariance)
    s2, log = update(s, gps((zx, zy), (rx, ry)), CFG)
    _assert_psd(s2.covariance)
    assert np.trace(s2.covariance) <= np.trace(s.covariance) + 1e-12
    assert log.chi2 >= 0
    np.testing.assert_allclose(log.innovation_covariance, log.innovation_covariance.T)
    assert np.all(np.linalg.eigvalsh(log.innovation_covariance) > 0)
    assert -math.pi < s2.heading <= math.pi


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), shrink=st.floats(0.05, 0.95))
def test_smaller_variance_pulls_closer(seed, shrink):
    rng = np.random.Generator(np.random.PCG64(seed))
    s = MsfState(rng.normal(size=2), rng.normal(size=2), 0.3, random_spd(rng))
    z = s.position + rng.normal(size=2) + 0.1
    r2 = rng.uniform(0.01, 2.0, 2)
    near, _ = update(s, gps(z, r2 * shrink), CFG)
    far, _ = update(s, gps(z, r2), CFG)
    assert np.linalg.norm(near.position - z) < np.linalg.norm(far.position - z)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), angle=st.floats(-math.pi, math.pi))
def test_chi_squared_frame_invariant(seed, angle):
    rng = np.random.Generator(np.random.PCG64(seed))
    P = random_spd(rng)
    x = rng.normal(size=5)
    z = rng.normal(size=2)
    R = np.diag(rng.uniform(0.1, 1.0, 2))
    s = MsfState.from_vector(x, P)
    H = CFG.observation_model
    chi = chi_squared(s, Measurement(Source.GPS, z, R), CFG)
    # rotate the state and measurement frames together and conjugate H accordingly
    c, sn = math.cos(angle), math.sin(angle)
    Rm = np.array([[c, -sn], [sn, c]])
    T = rng.normal(size=(5, 5)) + 5 * np.eye(5)
    x2, P2, H2 = T @ x, T @ P @ T.T, Rm @ H @ np.linalg.inv(T)
    innov = Rm @ z - H2 @ x2
    S = H2 @ P2 @ H2.T + Rm @ R @ Rm.T
    chi2 = float(innov @ np.linalg.solve(S, innov))
    assert chi2 == pytest.approx(chi, rel=1e-9, abs=1e-9)


def test_discarded_outlier_is_bit_identical_in_streaming_filter():
    P = np.diag([0.5, 0.5, 1.0, 1.0, 1.0])
    f = FusionFilter(state(P=P), CFG)
    x0, P0 = f.x.copy(), f.P.copy()
    status, chi2 = f.measure((10.0, 0.0), (0.5, 0.5))
    assert status == _kernels.REJECTED and chi2 > CFG.chi2_threshold
    assert np.array_equal(f.x, x0) and np.array_equal(f.P, P0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), partial=st.booleans())
def test_streaming_filter_matches_functional_api(seed, partial):
    rng = np.random.Generator(np.random.PCG64(seed))
    cfg = CFG.with_policy(OutlierPolicy.PARTIAL, 0.3) if partial else CFG
    s = MsfState(rng.normal(size=2), rng.normal(size=2), rng.uniform(-3, 3), random_spd(rng, scale=0.1))
    f = FusionFilter(s, cfg)
    for k in range(5):
        a, w = tuple(rng.normal(size=2)), float(rng.normal() * 0.1)
        s = predict(s, TransitionModel(a, w, 0.005), cfg)
        f.predict(a, w, s.timestamp)
        z, r = s.position + rng.normal(size=2) * 2, rng.uniform(0.01, 0.5, 2)
        s, log = process_measurement(s, gps(z, r), cfg)
        status, chi2 = f.measure(z, r)
        assert chi2 == pytest.approx(log.chi2, rel=1e-9)
        assert (status == _kernels.ACCEPTED) == log.accepted
    np.testing.assert_allclose(f.x, s.vector, atol=1e-10)
    np.testing.assert_allclose(f.P, s.covariance, atol=1e-12)
