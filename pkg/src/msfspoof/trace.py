"""Sensor traces: synthesis, perturbation and JSONL serialization.

A :class:`Trace` is stored column-wise: an event-kind code, a timestamp and a
five-slot payload row per event. Payload layout by kind:

========  =====================================
truth     px, py, vx, vy, heading
imu       accel_x, accel_y (body), yaw_rate, -, -
lidar     px, py, var_x, var_y, -
gps       px, py, var_x, var_y, -
========  =====================================

Within equal timestamps events are ordered truth, imu, lidar, gps.
"""

from __future__ import annotations

import gzip
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Union

import numpy as np

from ._kernels import GPS, IMU, LIDAR, TRUTH

KIND_NAMES = {TRUTH: "truth", IMU: "imu", LIDAR: "lidar", GPS: "gps"}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}

IMU_RATE = 200.0
LIDAR_RATE = 5.0
GPS_RATE = 1.0
TRUTH_RATE = 100.0


class TraceFormatError(ValueError):
    """A trace file line could not be parsed."""


class TraceValidationError(ValueError):
    """Trace content violates an ordering or range constraint."""


@dataclass(frozen=True)
class GroundTruthPose:
    position: np.ndarray
    velocity: np.ndarray
    heading: float
    timestamp: float

    def __eq__(self, other):
        if not isinstance(other, GroundTruthPose):
            return NotImplemented
        return (np.array_equal(self.position, other.position)
                and np.array_equal(self.velocity, other.velocity)
                and self.heading == other.heading and self.timestamp == other.timestamp)


@dataclass(frozen=True)
class ImuSample:
    accel_body: tuple[float, float]
    yaw_rate: float


@dataclass(frozen=True)
class GpsFix:
    position: tuple[float, float]
    uncertainty: tuple[float, float]


@dataclass(frozen=True)
class LidarFix:
    position: tuple[float, float]
    uncertainty: tuple[float, float]


@dataclass(frozen=True)
class TruthPose:
    pose: GroundTruthPose


Payload = Union[ImuSample, GpsFix, LidarFix, TruthPose]


@dataclass(frozen=True)
class TraceEvent:
    timestamp: float
    payload: Payload


@dataclass(frozen=True)
class NoiseModel:
    gps_pos_sigma: float = 0.0
    lidar_pos_sigma: float = 0.0
    imu_accel_sigma: float = 0.0
    imu_gyro_sigma: float = 0.0
    gps_var_nominal: float = 0.01
    lidar_var_nominal: float = 0.004
    seed: int = 0

    def __post_init__(self):
        for name in ("gps_pos_sigma", "lidar_pos_sigma", "imu_accel_sigma", "imu_gyro_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not (self.gps_var_nominal > 0 and self.lidar_var_nominal > 0):
            raise ValueError("nominal variances must be positive")


@dataclass(frozen=True)
class UnconfidentPeriod:
    start: float
    end: float
    lidar_var_scale: float = 100.0
    lidar_bias_sigma: float = 0.3

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("period start must precede end")
        if self.lidar_var_scale < 1:
            raise ValueError("lidar_var_scale must be >= 1")
        if self.lidar_bias_sigma < 0:
            raise ValueError("lidar_bias_sigma must be non-negative")


@dataclass(frozen=True)
class Scenario:
    """Straight-road drive at constant speed."""

    speed_mps: float = 20.1168  # 45 mph
    heading: float = 0.0
    origin: tuple[float, float] = (0.0, 0.0)


def _sort_order(kind: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.lexsort((kind, t))


class Trace:
    """Immutable, time-ordered sensor event stream."""

    def __init__(self, kind, t, data, *, validate: bool = True):
        kind = np.ascontiguousarray(kind, dtype=np.int64).reshape(-1)
        t = np.ascontiguousarray(t, dtype=np.float64).reshape(-1)
        data = np.ascontiguousarray(data, dtype=np.float64).reshape(-1, 5)
        if not (len(kind) == len(t) == len(data)):
            raise ValueError("trace columns differ in length")
        if validate:
            if len(t) and np.any(np.diff(t) < 0):
                bad = int(np.argmax(np.diff(t) < 0)) + 1
                raise TraceValidationError(f"timestamps not monotone at event {bad}")
            if not np.all(np.isin(kind, list(KIND_NAMES))):
                raise TraceValidationError("unknown event kind code")
        for a in (kind, t, data):
            a.setflags(write=False)
        self.kind, self.t, self.data = kind, t, data

    @classmethod
    def from_unsorted(cls, kind, t, data) -> "Trace":
        kind = np.asarray(kind, dtype=np.int64)
        t = np.asarray(t, dtype=np.float64)
        order = _sort_order(kind, t)
        return cls(kind[order], t[order], np.asarray(data, dtype=np.float64)[order])

    @classmethod
    def from_events(cls, events: Iterable[TraceEvent]) -> "Trace":
        kinds, ts, rows = [], [], []
        for ev in events:
            k, row = _encode_payload(ev.payload)
            kinds.append(k)
            ts.append(ev.timestamp)
            rows.append(row)
        if not kinds:
            return cls.empty()
        return cls.from_unsorted(kinds, ts, rows)

    @classmethod
    def empty(cls) -> "Trace":
        return cls(np.zeros(0, np.int64), np.zeros(0), np.zeros((0, 5)))

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[TraceEvent]:
        for i in range(len(self)):
            yield self.event(i)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Trace):
            return NotImplemented
        return (np.array_equal(self.kind, other.kind) and np.array_equal(self.t, other.t)
                and np.array_equal(self.data, other.data))

    def event(self, i: int) -> TraceEvent:
        return TraceEvent(float(self.t[i]), _decode_payload(int(self.kind[i]), self.data[i], float(self.t[i])))

    def indices(self, kind: int) -> np.ndarray:
        return np.flatnonzero(self.kind == kind)

    def count(self, kind: int) -> int:
        return int(np.count_nonzero(self.kind == kind))

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0]) if len(self) else 0.0

    def select(self, mask: np.ndarray) -> "Trace":
        return Trace(self.kind[mask], self.t[mask], self.data[mask], validate=False)

    def with_data(self, data: np.ndarray) -> "Trace":
        return Trace(self.kind, self.t, data, validate=False)

    def initial_pose(self) -> GroundTruthPose:
        idx = self.indices(TRUTH)
        if not len(idx):
            raise TraceValidationError("trace carries no truth pose")
        return _decode_payload(TRUTH, self.data[idx[0]], float(self.t[idx[0]])).pose

    def truth_at(self, times) -> tuple[np.ndarray, np.ndarray]:
        """Linearly interpolated truth ``(positions (n,2), headings (n,))``."""
        idx = self.indices(TRUTH)
        if len(idx) == 0:
            raise TraceValidationError("trace carries no truth pose")
        tt = self.t[idx]
        rows = self.data[idx]
        times = np.asarray(times, dtype=float)
        px = np.interp(times, tt, rows[:, 0])
        py = np.interp(times, tt, rows[:, 1])
        hd = np.interp(times, tt, np.unwrap(rows[:, 4]))
        return np.column_stack([px, py]), np.arctan2(np.sin(hd), np.cos(hd))


def _encode_payload(p: Payload) -> tuple[int, list]:
    if isinstance(p, ImuSample):
        return IMU, [p.accel_body[0], p.accel_body[1], p.yaw_rate, 0.0, 0.0]
    if isinstance(p, GpsFix):
        return GPS, [p.position[0], p.position[1], p.uncertainty[0], p.uncertainty[1], 0.0]
    if isinstance(p, LidarFix):
        return LIDAR, [p.position[0], p.position[1], p.uncertainty[0], p.uncertainty[1], 0.0]
    if isinstance(p, TruthPose):
        q = p.pose
        return TRUTH, [q.position[0], q.position[1], q.velocity[0], q.velocity[1], q.heading]
    raise TypeError(f"unknown payload {p!r}")


def _decode_payload(kind: int, row: np.ndarray, t: float) -> Payload:
    r = [float(v) for v in row]
    if kind == IMU:
        return ImuSample((r[0], r[1]), r[2])
    if kind == GPS:
        return GpsFix((r[0], r[1]), (r[2], r[3]))
    if kind == LIDAR:
        return LidarFix((r[0], r[1]), (r[2], r[3]))
    return TruthPose(GroundTruthPose(np.array(r[0:2]), np.array(r[2:4]), r[4], t))


# -- synthesis -----------------------------------------------------------------

def _grid(duration: float, rate: float, include_zero: bool) -> np.ndarray:
    n = int(math.floor(duration * rate + 1e-9))
    k = np.arange(0 if include_zero else 1, n + 1)
    return k / rate


def generate_synthetic_trace(duration: float, scenario: Scenario | None = None,
                             noise: NoiseModel | None = None) -> Trace:
    """Straight constant-speed drive with IMU 200 Hz, LiDAR 5 Hz, GPS 1 Hz, truth 100 Hz."""
    if not duration > 0:
        raise ValueError("duration must be positive")
    scenario = scenario or Scenario()
    noise = noise or NoiseModel()
    rng = np.random.Generator(np.random.PCG64(noise.seed))

    h = scenario.heading
    vel = scenario.speed_mps * np.array([math.cos(h), math.sin(h)])
    origin = np.asarray(scenario.origin, dtype=float)

    def pos(times):
        return origin + times[:, None] * vel

    t_truth = _grid(duration, TRUTH_RATE, True)
    t_imu = _grid(duration, IMU_RATE, False)
    t_lidar = _grid(duration, LIDAR_RATE, False)
    t_gps = _grid(duration, GPS_RATE, False)

    truth = np.zeros((len(t_truth), 5))
    truth[:, 0:2] = pos(t_truth)
    truth[:, 2:4] = vel
    truth[:, 4] = h

    imu = np.zeros((len(t_imu), 5))
    imu[:, 0:2] = rng.normal(0.0, 1.0, (len(t_imu), 2)) * noise.imu_accel_sigma
    imu[:, 2] = rng.normal(0.0, 1.0, len(t_imu)) * noise.imu_gyro_sigma

    lidar = np.zeros((len(t_lidar), 5))
    lidar[:, 0:2] = pos(t_lidar) + rng.normal(0.0, 1.0, (len(t_lidar), 2)) * noise.lidar_pos_sigma
    lidar[:, 2:4] = noise.lidar_var_nominal

    gps = np.zeros((len(t_gps), 5))
    gps[:, 0:2] = pos(t_gps) + rng.normal(0.0, 1.0, (len(t_gps), 2)) * noise.gps_pos_sigma
    gps[:, 2:4] = noise.gps_var_nominal

    kind = np.concatenate([np.full(len(t_truth), TRUTH), np.full(len(t_imu), IMU),
                           np.full(len(t_lidar), LIDAR), np.full(len(t_gps), GPS)])
    t = np.concatenate([t_truth, t_imu, t_lidar, t_gps])
    data = np.concatenate([truth, imu, lidar, gps])
    return Trace.from_unsorted(kind, t, data)


def inject_unconfident_periods(trace: Trace, periods: list[UnconfidentPeriod], seed: int = 0) -> Trace:
    """Inflate LiDAR variance and add Gaussian position offsets inside each period."""
    periods = sorted(periods, key=lambda p: p.start)
    for a, b in zip(periods, periods[1:]):
        if b.start < a.end:
            raise TraceValidationError(f"overlapping unconfident periods at t={b.start}")
    if len(trace) and periods:
        if periods[0].start < trace.t[0] or periods[-1].end > trace.t[-1]:
            raise TraceValidationError("unconfident period outside the trace span")
    rng = np.random.Generator(np.random.PCG64(seed))
    data = trace.data.copy()
    lidar = trace.kind == LIDAR
    for p in periods:
        idx = np.flatnonzero(lidar & (trace.t >= p.start) & (trace.t <= p.end))
        data[idx, 2:4] *= p.lidar_var_scale
        offsets = rng.normal(0.0, 1.0, (len(idx), 2)) * p.lidar_bias_sigma
        data[idx, 0:2] += offsets
    return trace.with_data(data)


def strip_lidar(trace: Trace) -> Trace:
    """Drop every LiDAR fix (GPS-only fusion)."""
    return trace.select(trace.kind != LIDAR)


def mirror_trace(trace: Trace, origin=(0.0, 0.0), heading: float = 0.0) -> Trace:
    """Reflect every event about the line through ``origin`` along ``heading``."""
    c, s = math.cos(2 * heading), math.sin(2 * heading)
    refl = np.array([[c, s], [s, -c]])
    o = np.asarray(origin, dtype=float)
    data = trace.data.copy()
    pos_rows = trace.kind != IMU
    data[pos_rows, 0:2] = (data[pos_rows, 0:2] - o) @ refl.T + o
    truth = trace.kind == TRUTH
    data[truth, 2:4] = data[truth, 2:4] @ refl.T
    data[truth, 4] = np.arctan2(np.sin(2 * heading - data[truth, 4]), np.cos(2 * heading - data[truth, 4]))
    imu = trace.kind == IMU
    data[imu, 1] = -data[imu, 1]
    data[imu, 2] = -data[imu, 2]
    return trace.with_data(data)


def median_gps_uncertainty(trace: Trace) -> np.ndarray:
    """Per-axis median of the GPS fix variances, as a 2x2 diagonal matrix."""
    idx = trace.indices(GPS)
    if not len(idx):
        raise ValueError("trace has no GPS fixes")
    return np.diag(np.median(trace.data[idx, 2:4], axis=0))


# -- JSONL I/O -----------------------------------------------------------------

def _open(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def event_record(kind: int, t: float, row) -> dict:
    r = [float(v) for v in row]
    rec = {"t": float(t), "kind": KIND_NAMES[kind]}
    if kind == IMU:
        rec.update(accel_body=r[0:2], yaw_rate=r[2])
    elif kind == TRUTH:
        rec.update(position=r[0:2], velocity=r[2:4], heading=r[4])
    else:
        rec.update(position=r[0:2], variance=r[2:4])
    return rec


def record_row(rec: dict) -> tuple[int, float, list]:
    """Inverse of :func:`event_record`; the hook for dataset converters."""
    kind = KIND_CODES[rec["kind"]]
    t = float(rec["t"])
    if kind == IMU:
        ax, ay = rec["accel_body"]
        row = [ax, ay, rec["yaw_rate"], 0.0, 0.0]
    elif kind == TRUTH:
        row = [*rec["position"], *rec["velocity"], rec["heading"]]
    else:
        row = [*rec["position"], *rec["variance"], 0.0]
    if len(row) != 5:
        raise ValueError("payload has the wrong number of fields")
    return kind, t, [float(v) for v in row]


def from_records(records: Iterable[dict]) -> Trace:
    """Build a trace from event dicts, e.g. rows converted from an external dataset."""
    kinds, ts, rows = [], [], []
    for rec in records:
        k, t, row = record_row(rec)
        kinds.append(k)
        ts.append(t)
        rows.append(row)
    if not kinds:
        return Trace.empty()
    return Trace.from_unsorted(kinds, ts, rows)


def write_trace(trace: Trace, path) -> None:
    with _open(path, "w") as fh:
        for k, t, row in zip(trace.kind, trace.t, trace.data):
            fh.write(json.dumps(event_record(int(k), t, row), separators=(",", ":")))
            fh.write("\n")


def read_trace(path) -> Trace:
    kinds, ts, rows = [], [], []
    with _open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                k, t, row = record_row(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise TraceFormatError(f"line {lineno}: {exc}") from exc
            if ts and t < ts[-1]:
                raise TraceValidationError(f"line {lineno}: timestamp {t} precedes {ts[-1]}")
            kinds.append(k)
            ts.append(t)
            rows.append(row)
    if not kinds:
        return Trace.empty()
    return Trace(kinds, ts, rows)
