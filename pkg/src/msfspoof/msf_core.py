"""Kalman-filter multi-sensor fusion: IMU prediction, position update, gating.

The filter state is planar: ``[px, py, vx, vy, heading]``. IMU samples drive
the prediction; GPS and LiDAR-locator fixes are position measurements gated
by a chi-squared test on the innovation.

These functions are the readable reference path. The attack engine replays
traces through the compiled twins in :mod:`msfspoof._kernels`; the test suite
checks the two agree.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels

STATE_DIM = 5
MEAS_DIM = 2


class NumericInputError(ValueError):
    """Raised when a state or model carries non-finite entries."""


class Source(enum.Enum):
    GPS = "gps"
    LIDAR = "lidar"
    GPS_SPOOFED = "gps_spoofed"


class OutlierPolicy(enum.Enum):
    DISCARD = "discard"
    PARTIAL = "partial"


def wrap_angle(a: float) -> float:
    """Normalize an angle to (-pi, pi]."""
    return float(_kernels.wrap_angle(float(a)))


@dataclass(frozen=True)
class MsfState:
    position: np.ndarray
    velocity: np.ndarray
    heading: float
    covariance: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        object.__setattr__(self, "velocity", np.asarray(self.velocity, dtype=float).reshape(2))
        object.__setattr__(self, "covariance", np.asarray(self.covariance, dtype=float).reshape(5, 5))
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, [self.heading]])

    @classmethod
    def from_vector(cls, x, covariance, timestamp=0.0) -> "MsfState":
        x = np.array(x, dtype=float)
        return cls(x[0:2], x[2:4], float(x[4]), covariance, timestamp)


@dataclass(frozen=True)
class Measurement:
    source: Source
    position: np.ndarray
    uncertainty: np.ndarray
    timestamp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(2))
        R = np.asarray(self.uncertainty, dtype=float)
        if R.ndim == 1:
            R = np.diag(R)
        R = R.reshape(2, 2)
        if not np.all(np.diag(R) > 0):
            raise ValueError("measurement variances must be strictly positive")
        object.__setattr__(self, "uncertainty", R)


def _default_h() -> np.ndarray:
    return np.hstack([np.eye(2), np.zeros((2, 3))])


@dataclass(frozen=True)
class KfConfig:
    """Filter tuning: process noise density, observation model and gating.

    ``process_noise`` is a per-second density; prediction adds ``Q * dt``.
    """

    process_noise: np.ndarray
    observation_model: np.ndarray = field(default_factory=_default_h)
    chi2_threshold: float = 3.841
    outlier_policy: OutlierPolicy = OutlierPolicy.DISCARD
    partial_weight: float = 0.5
    initial_covariance: np.ndarray = field(default_factory=lambda: np.diag([1e-3, 1e-3, 1e-3, 1e-3, 1e-3]))

    def __post_init__(self):
        Q = np.asarray(self.process_noise, dtype=float)
        if Q.ndim == 1:
            Q = np.diag(Q)
        object.__setattr__(self, "process_noise", Q.reshape(5, 5))
        object.__setattr__(self, "observation_model", np.asarray(self.observation_model, dtype=float).reshape(2, 5))
        P0 = np.asarray(self.initial_covariance, dtype=float)
        if P0.ndim == 1:
            P0 = np.diag(P0)
        object.__setattr__(self, "initial_covariance", P0.reshape(5, 5))
        if not self.chi2_threshold > 0:
            raise ValueError("chi2_threshold must be positive")
        if self.outlier_policy is OutlierPolicy.PARTIAL and not 0 < self.partial_weight < 1:
            raise ValueError("partial weight must lie in (0, 1)")

    @property
    def outlier_weight(self) -> float:
        """Innovation scale for gated measurements (0 means discard)."""
        return 0.0 if self.outlier_policy is OutlierPolicy.DISCARD else float(self.partial_weight)

    @property
    def uses_default_h(self) -> bool:
        return bool(np.array_equal(self.observation_model, _default_h()))

    def with_policy(self, policy: OutlierPolicy, weight: float = 0.5) -> "KfConfig":
        return replace(self, outlier_policy=policy, partial_weight=weight)


@dataclass(frozen=True)
class KfStepLog:
    kalman_gain: np.ndarray
    innovation: np.ndarray
    innovation_covariance: np.ndarray
    chi2: float
    accepted: bool


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericInputError("non-finite value in filter input")


def transition_jacobian(state: MsfState, transition) -> np.ndarray:
    """Jacobian of the IMU integration map, evaluated at the prior state."""
    dt = transition.dt
    ax, ay = transition.accel_body
    c, s = np.cos(state.heading), np.sin(state.heading)
    F = np.eye(STATE_DIM)
    F[0, 2] = F[1, 3] = dt
    F[2, 4] = (-s * ax - c * ay) * dt
    F[3, 4] = (c * ax - s * ay) * dt
    return F


def predict(state: MsfState, transition, config: KfConfig) -> MsfState:
    """Integrate one IMU sample and propagate the covariance.

    ``P <- F P F^T + Q dt`` with ``F`` the Jacobian at the prior state.
    """
    accel = np.asarray(transition.accel_body, dtype=float)
    _check_finite(state.vector, state.covariance, accel, [transition.yaw_rate, transition.dt])
    if not transition.dt > 0:
        raise ValueError("transition dt must be positive")
    dt = transition.dt
    c, s = np.cos(state.heading), np.sin(state.heading)
    rot = np.array([[c, -s], [s, c]])
    F = transition_jacobian(state, transition)
    P = F @ state.covariance @ F.T + config.process_noise * dt
    P = 0.5 * (P + P.T)
    return MsfState(
        position=state.position + state.velocity * dt,
        velocity=state.velocity + rot @ accel * dt,
        heading=state.heading + transition.yaw_rate * dt,
        covariance=P,
        timestamp=state.timestamp + dt,
    )


def _innovation(state: MsfState, meas: Measurement, config: KfConfig):
    H = config.observation_model
    innov = meas.position - H @ state.vector
    S = H @ state.covariance @ H.T + meas.uncertainty
    S = 0.5 * (S + S.T)
    if np.linalg.cond(S) > 1e12:
        raise np.linalg.LinAlgError("innovation covariance is singular")
    return innov, S


def chi_squared(state: MsfState, meas: Measurement, config: KfConfig) -> float:
    """Normalized innovation squared ``(z - Hx)^T S^-1 (z - Hx)``."""
    innov, S = _innovation(state, meas, config)
    return float(innov @ np.linalg.solve(S, innov))


def _apply(state, meas, config, innov_scale):
    H = config.observation_model
    innov, S = _innovation(state, meas, config)
    chi2 = float(innov @ np.linalg.solve(S, innov))
    P = state.covariance
    K = np.linalg.solve(S, H @ P).T
    x = state.vector + K @ (innov_scale * innov)
    P_new = P - K @ H @ P
    P_new = 0.5 * (P_new + P_new.T)
    new_state = MsfState.from_vector(x, P_new, state.timestamp)
    return new_state, K, innov, S, chi2


def update(state: MsfState, meas: Measurement, config: KfConfig) -> tuple[MsfState, KfStepLog]:
    """Unconditional Kalman update with the position measurement."""
    new_state, K, innov, S, chi2 = _apply(state, meas, config, 1.0)
    return new_state, KfStepLog(K, innov, S, chi2, True)


def process_measurement(state: MsfState, meas: Measurement, config: KfConfig) -> tuple[MsfState, KfStepLog]:
    """Gate the measurement by chi-squared, then update, discard or down-weight it."""
    innov, S = _innovation(state, meas, config)
    chi2 = float(innov @ np.linalg.solve(S, innov))
    if chi2 <= config.chi2_threshold:
        return update(state, meas, config)
    if config.outlier_policy is OutlierPolicy.DISCARD:
        return state, KfStepLog(np.zeros((STATE_DIM, MEAS_DIM)), innov, S, chi2, False)
    new_state, K, innov, S, chi2 = _apply(state, meas, config, config.partial_weight)
    return new_state, KfStepLog(K, innov, S, chi2, False)


class FusionFilter:
    """Mutable filter instance for streaming use.

    Wraps the compiled kernels; one instance per thread.
    """

    def __init__(self, state: MsfState, config: KfConfig):
        if not config.uses_default_h:
            raise ValueError("FusionFilter supports the default position observation model only")
        self.config = config
        self.x = state.vector.copy()
        self.P = state.covariance.copy()
        self.clock = np.array([state.timestamp])
        self._K = np.empty((5, 2))

    @property
    def state(self) -> MsfState:
        return MsfState.from_vector(self.x, self.P.copy(), float(self.clock[0]))

    def copy(self) -> "FusionFilter":
        other = FusionFilter.__new__(FusionFilter)
        other.config = self.config
        other.x = self.x.copy()
        other.P = self.P.copy()
        other.clock = self.clock.copy()
        other._K = np.empty((5, 2))
        return other

    def predict(self, accel_body, yaw_rate: float, timestamp: float) -> None:
        dt = timestamp - self.clock[0]
        if dt > 0:
            _kernels.predict_inplace(self.x, self.P, float(accel_body[0]), float(accel_body[1]),
                                     float(yaw_rate), dt, self.config.process_noise)
            self.clock[0] = timestamp

    def measure(self, position, variances) -> tuple[int, float]:
        """Gated update; returns ``(status, chi2)`` with kernel status codes."""
        status, chi2 = _kernels.update_inplace(
            self.x, self.P, float(position[0]), float(position[1]),
            float(variances[0]), float(variances[1]),
            self.config.chi2_threshold, self.config.outlier_weight, self._K)
        if status == _kernels.SINGULAR:
            raise np.linalg.LinAlgError("innovation covariance is singular")
        return status, chi2
