"""GPS spoofing against the fusion filter.

Every attack here follows the same loop. Fork the attacked filter from the
non-attacked baseline at a GPS epoch. Replay LiDAR and IMU events unchanged,
and at each GPS epoch replace the fix by one placed ``delta`` metres beside
the victim's true position. The attacks differ only in how they choose
``delta``:

* :func:`fusion_ripper` probes with a constant ``d`` until the deviation
  crosses the trigger, then grows it as ``d * f**i``;
* :func:`random_attack` draws it uniformly;
* :func:`exhaustive_window_search` tries every candidate on a cloned filter
  and commits the one that deviates most by the end of the epoch.

Deviation always means the signed lateral offset of the attacked estimate
from the baseline estimate, measured along the normal of the true heading
and counted positive toward the attacked side.
"""

from __future__ import annotations

import copy
import enum
import gzip
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _kernels
from .analysis import LOCAL, WindowLog, goal_thresholds, max_window_fit
from .msf_core import FusionFilter, KfConfig, Measurement, MsfState, Source
from .replay import Replay
from .trace import GPS, IMU, LIDAR, Trace, median_gps_uncertainty
from .vehicle import ControllerConfig

_GOALS = goal_thresholds(LOCAL)
DEFAULT_GOALS = (_GOALS.off_road, _GOALS.wrong_way)
DEFAULT_TRIGGER = _GOALS.touch_lane_line
FIT_POINTS = 10


class Side(enum.Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def sign(self) -> float:
        return 1.0 if self is Side.LEFT else -1.0


class Mode(enum.Enum):
    FULL = "full"
    STAGE1_ONLY = "stage1_only"
    STAGE2_ONLY = "stage2_only"


def _as_cov(u) -> np.ndarray:
    R = np.asarray(u, dtype=float)
    if R.ndim == 0:
        R = np.diag([float(R), float(R)])
    elif R.ndim == 1:
        R = np.diag(R)
    R = R.reshape(2, 2)
    if not np.all(np.diag(R) > 0):
        raise ValueError("spoof uncertainty must have positive variances")
    return R


@dataclass(frozen=True)
class AttackConfig:
    """FusionRipper parameters.

    ``spoof_uncertainty`` of ``None`` means the median GPS variance of the
    attacked trace.
    """

    d: float
    f: float = 1.0
    side: Side = Side.LEFT
    trigger_threshold: float = DEFAULT_TRIGGER
    spoof_uncertainty: np.ndarray | None = None
    max_duration: float = 120.0
    mode: Mode = Mode.FULL

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("d must be positive")
        if not self.f >= 1:
            raise ValueError("f must be at least 1")
        if not self.trigger_threshold > 0:
            raise ValueError("trigger_threshold must be positive")
        if not self.max_duration > 0:
            raise ValueError("max_duration must be positive")
        if self.spoof_uncertainty is not None:
            object.__setattr__(self, "spoof_uncertainty", _as_cov(self.spoof_uncertainty))
        if isinstance(self.side, str):
            object.__setattr__(self, "side", Side(self.side))
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", Mode(self.mode))


@dataclass(frozen=True)
class SpoofErrorModel:
    pos_sigma: float = 0.058
    var_sigma: float = 0.008
    multiplier: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.pos_sigma < 0 or self.var_sigma < 0 or self.multiplier < 0:
            raise ValueError("spoof error sigmas and multiplier must be non-negative")


def apply_spoof_error(meas: Measurement, model: SpoofErrorModel, rng: np.random.Generator) -> Measurement:
    """Perturb a spoofed fix the way an imperfect spoofer would.

    The position moves by ``r`` in a uniformly random direction with
    ``r ~ N(0, (m * pos_sigma)**2)``; each variance gets additive
    ``N(0, (m * var_sigma)**2)`` noise, floored at a thousandth of its
    nominal value so it stays positive.
    """
    if meas.source is not Source.GPS_SPOOFED:
        raise ValueError("spoof error applies to spoofed GPS measurements only")
    r = rng.normal(0.0, 1.0) * model.multiplier * model.pos_sigma
    alpha = rng.uniform(0.0, 2.0 * math.pi)
    dv = rng.normal(0.0, 1.0, 2) * model.multiplier * model.var_sigma
    nominal = np.diag(meas.uncertainty)
    var = np.maximum(nominal + dv, nominal * 1e-3)
    pos = meas.position + r * np.array([math.cos(alpha), math.sin(alpha)])
    return Measurement(meas.source, pos, np.diag(var), meas.timestamp)


# -- outcomes --------------------------------------------------------------------

def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass(frozen=True)
class AttackOutcome:
    """One attack run.

    ``times``/``deviations`` are sampled at every measurement event (one
    sample per timestamp) and are empty for compact runs. ``gps_deviations``,
    ``deltas`` and ``accepted`` have one entry per spoofed GPS epoch.
    ``success`` maps each requested goal to the time from attack start until
    the deviation first reached it, or ``None``. ``truncated`` marks runs that
    stopped early once every goal was reached.
    """

    start_time: float
    stage2_time: float | None
    max_deviation: float
    success: dict
    fitted_base: float
    d: float = 0.0
    f: float = 1.0
    side: str = "left"
    mode: str = "full"
    trial: int = 0
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    deviations: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gps_deviations: np.ndarray = field(default_factory=lambda: np.zeros(0))
    deltas: np.ndarray = field(default_factory=lambda: np.zeros(0))
    accepted: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    truncated: bool = False

    @property
    def deviation_series(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.deviations.tolist()))

    def success_time(self, goal: float) -> float | None:
        """Seconds from start until the deviation reached ``goal``, or None."""
        key = round(float(goal), 9)
        for g, t in self.success.items():
            if round(float(g), 9) == key:
                return t
        if len(self.times):
            hit = np.flatnonzero(self.deviations >= goal)
            return float(self.times[hit[0]] - self.start_time) if len(hit) else None
        if self.max_deviation < goal and not self.truncated:
            return None
        if self.max_deviation >= goal:
            raise ValueError(f"success time for goal {goal} was not recorded")
        raise ValueError(f"run stopped before goal {goal} could be decided")

    def to_record(self) -> dict:
        return {
            "start_time": self.start_time,
            "stage2_time": _num(self.stage2_time),
            "max_deviation": _num(self.max_deviation),
            "success": {repr(float(g)): _num(t) for g, t in sorted(self.success.items())},
            "fitted_base": _num(self.fitted_base),
            "d": self.d, "f": self.f, "side": self.side, "mode": self.mode, "trial": self.trial,
            "times": self.times.tolist(),
            "deviations": self.deviations.tolist(),
            "gps_deviations": self.gps_deviations.tolist(),
            "deltas": self.deltas.tolist(),
            "accepted": [bool(a) for a in self.accepted],
            "truncated": self.truncated,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AttackOutcome":
        def arr(key, dtype=float):
            return np.asarray(rec.get(key, []), dtype=dtype)

        md = rec.get("max_deviation")
        fb = rec.get("fitted_base")
        return cls(
            start_time=float(rec["start_time"]),
            stage2_time=rec.get("stage2_time"),
            max_deviation=-math.inf if md is None else float(md),
            success={float(g): t for g, t in rec.get("success", {}).items()},
            fitted_base=math.nan if fb is None else float(fb),
            d=float(rec.get("d", 0.0)), f=float(rec.get("f", 1.0)),
            side=rec.get("side", "left"), mode=rec.get("mode", "full"), trial=int(rec.get("trial", 0)),
            times=arr("times"), deviations=arr("deviations"), gps_deviations=arr("gps_deviations"),
            deltas=arr("deltas"), accepted=arr("accepted", bool), truncated=bool(rec.get("truncated", False)),
        )


def _open(path, mode):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def dump_outcomes(outcomes: Iterable[AttackOutcome], path) -> None:
    """Write outcomes as JSONL, one run per line."""
    with _open(path, "w") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.to_record(), sort_keys=True, allow_nan=False) + "\n")


def load_outcomes(path) -> list[AttackOutcome]:
    out = []
    with _open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(AttackOutcome.from_record(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"line {lineno}: bad outcome record ({exc})") from exc
    return out


# -- run engine ------------------------------------------------------------------

_PAUSE = object()
AUTHENTIC = None  # schedule value meaning "forward the real GPS fix"


class _Run:
    """Mutable state of one attack run; cheap to clone for prefix sharing."""

    def __init__(self, filt: FusionFilter, epoch: int, prev: int, plant=None, rng=None):
        self.filt = filt
        self.epoch = epoch
        self.prev = prev
        self.plant = plant
        self.rng = rng
        self.at_epoch = False
        self.stage = 1
        self.i = 0
        self.window_max = 0.0
        self.best = -math.inf
        self.success = np.full(0, np.nan)
        self.times: list[np.ndarray] = []
        self.devs: list[np.ndarray] = []
        self.gps_devs: list[float] = []
        self.deltas: list[float] = []
        self.accepted: list[bool] = []
        self.stage2_epoch: int | None = None
        self.stage2_time: float | None = None
        self.done = False

    def clone(self) -> "_Run":
        c = copy.copy(self)
        c.filt = self.filt.copy()
        c.plant = None if self.plant is None else self.plant.copy()
        c.rng = None if self.rng is None else copy.deepcopy(self.rng)
        c.success = self.success.copy()
        for name in ("times", "devs", "gps_devs", "deltas", "accepted"):
            setattr(c, name, list(getattr(self, name)))
        return c


class _Engine:
    def __init__(self, replay: Replay, side: Side, start_epoch: int, max_duration: float,
                 spoof_cov: np.ndarray, goals: Sequence[float], stop_deviation: float | None,
                 keep_series: bool, spoof_error: SpoofErrorModel | None = None,
                 controller: ControllerConfig | None = None):
        self.r = replay
        self.sign = side.sign
        self.side = side
        self.epoch0 = start_epoch
        self.start_time = float(replay.gps_t[start_epoch])
        self.end_idx = replay.end_index(self.start_time + max_duration)
        self.spoof_var = (float(spoof_cov[0, 0]), float(spoof_cov[1, 1]))
        self.spoof_cov = spoof_cov
        self.goals = tuple(sorted(float(g) for g in goals))
        self.goal_arr = np.asarray(self.goals, dtype=float)
        self.stop = math.inf if stop_deviation is None else float(stop_deviation)
        self.stop_deviation = stop_deviation
        self.keep = keep_series
        self.spoof_error = spoof_error
        self.ctrl = None
        if controller is not None:
            c = controller
            self.ctrl = np.array([c.gain_lateral, c.gain_heading, c.steering_ratio, c.cycle_time, c.max_steering])

    def new_run(self, rng=None, initial_offset: float = 0.0) -> _Run:
        r = self.r
        filt = r.fork(self.epoch0)
        plant = None
        if self.ctrl is not None:
            plant = np.array([initial_offset, 0.0, 0.0])
            g = r.gps_idx[self.epoch0]
            filt.x[0] += initial_offset * r.nx[g]
            filt.x[1] += initial_offset * r.ny[g]
        run = _Run(filt, self.epoch0, int(r.gps_idx[self.epoch0]), plant, rng)
        run.success = np.full(len(self.goals), np.nan)
        return run

    # deviation bookkeeping
    def _record(self, run: _Run, times: np.ndarray, sdev: np.ndarray) -> None:
        if not len(sdev):
            return
        m = float(sdev.max())
        if m > run.window_max:
            run.window_max = m
        if m > run.best:
            run.best = m
        for j, g in enumerate(self.goals):
            if math.isnan(run.success[j]) and m >= g:
                k = int(np.argmax(sdev >= g))
                run.success[j] = float(times[k]) - self.start_time
        if self.keep:
            run.times.append(np.asarray(times, dtype=float))
            run.devs.append(np.asarray(sdev, dtype=float))
        if self.stop_deviation is not None and run.best >= self.stop_deviation:
            run.done = True

    def _segment(self, run: _Run, i0: int, i1: int) -> None:
        r = self.r
        if i1 <= i0:
            return
        if run.plant is None and not self.keep:
            f = run.filt
            kf = r.kf
            bad, m, nxt = _kernels.advance_track(
                r.kind, r.t, r.data, i0, i1, f.x, f.P, f.clock, kf.process_noise,
                kf.chi2_threshold, kf.outlier_weight, r.base_px, r.base_py, r.nx, r.ny,
                self.sign, self.start_time, self.goal_arr, run.success, self.stop)
            if bad >= 0:
                raise np.linalg.LinAlgError(f"singular innovation covariance at event {bad}")
            if m > run.window_max:
                run.window_max = m
            if m > run.best:
                run.best = m
            if nxt < i1 or run.best >= self.stop:
                run.done = True
        elif run.plant is None:
            r.advance(run.filt, i0, i1)
            idx, dev = r.deviations(i0, i1)
            self._record(run, r.t[idx], self.sign * dev)
        else:
            r.advance_closed_loop(run.filt, i0, i1, self.ctrl, run.plant)
            idx = np.flatnonzero(r.meas_mask[i0:i1]) + i0
            # the victim drifts opposite to the spoofed side
            self._record(run, r.t[idx], -self.sign * r.phys[idx])

    def _spoof(self, run: _Run, g: int, delta) -> None:
        r = self.r
        shift = 0.0 if run.plant is None else run.plant[0]
        nx, ny = r.nx[g], r.ny[g]
        if delta is AUTHENTIC:
            z = (r.data[g, 0] + shift * nx, r.data[g, 1] + shift * ny)
            var = (r.data[g, 2], r.data[g, 3])
            used = 0.0
        else:
            off = shift + self.sign * float(delta)
            z = (r.lane_x[g] + off * nx, r.lane_y[g] + off * ny)
            var = self.spoof_var
            used = float(delta)
            if self.spoof_error is not None:
                m = apply_spoof_error(Measurement(Source.GPS_SPOOFED, z, self.spoof_cov, float(r.t[g])),
                                      self.spoof_error, run.rng)
                z = (m.position[0], m.position[1])
                var = (m.uncertainty[0, 0], m.uncertainty[1, 1])
        status, _ = run.filt.measure(z, var)
        if run.plant is None:
            dev = self.sign * r.deviation_at(g, run.filt.x)
        else:
            r.phys[g] = run.plant[0]
            dev = -self.sign * run.plant[0]
        run.gps_devs.append(dev)
        run.deltas.append(used)
        run.accepted.append(status != _kernels.REJECTED)
        run.window_max = dev
        self._record(run, np.array([r.t[g]]), np.array([dev]))

    def drive(self, run: _Run, schedule: Callable[[_Run, int], object]) -> bool:
        """Advance ``run`` to the end of the attack. Returns False if the schedule paused."""
        r = self.r
        gps = r.gps_idx
        while not run.done:
            if run.epoch < len(gps) and gps[run.epoch] < self.end_idx:
                g = int(gps[run.epoch])
                if not run.at_epoch:
                    self._segment(run, run.prev, g)
                    run.at_epoch = True
                    if run.done:
                        break
                delta = schedule(run, g)
                if delta is _PAUSE:
                    return False
                self._spoof(run, g, delta)
                run.at_epoch = False
                run.prev = g + 1
                run.epoch += 1
            else:
                self._segment(run, run.prev, self.end_idx)
                run.prev = self.end_idx
                break
        return True

    def outcome(self, run: _Run, *, d: float, f: float, mode: str, trial: int = 0) -> AttackOutcome:
        if self.keep and run.times:
            t = np.concatenate(run.times)
            v = np.concatenate(run.devs)
            # one sample per timestamp: keep the last (post-update) value
            last = np.r_[t[1:] != t[:-1], True]
            t, v = t[last], v[last]
        else:
            t = v = np.zeros(0)
        # steepest FIT_POINTS-epoch growth anywhere in the run
        pts = run.gps_devs
        base = max_window_fit(pts, FIT_POINTS)[0].a if len(pts) >= 3 else math.nan
        success = {g: (None if math.isnan(v) else float(v)) for g, v in zip(self.goals, run.success)}
        return AttackOutcome(
            start_time=self.start_time, stage2_time=run.stage2_time,
            max_deviation=float(run.best), success=success, fitted_base=base,
            d=float(d), f=float(f), side=self.side.value, mode=mode, trial=trial,
            times=t, deviations=v, gps_deviations=np.asarray(run.gps_devs, dtype=float),
            deltas=np.asarray(run.deltas, dtype=float), accepted=np.asarray(run.accepted, dtype=bool),
            truncated=bool(run.done),
        )


def _as_replay(trace, kf_config: KfConfig | None) -> Replay:
    if isinstance(trace, Replay):
        if kf_config is not None and kf_config is not trace.kf:
            raise ValueError("replay was built with a different filter config")
        return trace
    if kf_config is None:
        from .config import kf_config as default_kf
        kf_config = default_kf()
    return Replay(trace, kf_config)


def _spoof_cov(replay: Replay, u) -> np.ndarray:
    return median_gps_uncertainty(replay.trace) if u is None else _as_cov(u)


def _stage2(run: _Run, d: float, f: float) -> float:
    delta = d * f ** run.i
    run.i += 1
    return delta


# -- FusionRipper ----------------------------------------------------------------

def fusion_ripper_batch(trace, start_time: float, d: float, fs: Sequence[float], *,
                        side: Side = Side.LEFT, mode: Mode = Mode.FULL,
                        trigger_threshold: float = DEFAULT_TRIGGER, spoof_uncertainty=None,
                        max_duration: float = 120.0, goals: Sequence[float] = DEFAULT_GOALS,
                        stop_deviation: float | None = None, keep_series: bool = False,
                        spoof_error: SpoofErrorModel | None = None, seed: int = 0,
                        kf_config: KfConfig | None = None,
                        controller: ControllerConfig | None = None) -> list[AttackOutcome]:
    """FusionRipper for one ``d`` and several ``f`` from a single start.

    Stage 1 does not depend on ``f``, so it runs once and each ``f``
    continues from a clone of the state at the switch. Results equal those
    of separate :func:`fusion_ripper` calls.
    """
    r = _as_replay(trace, kf_config)
    mode = Mode(mode)
    eng = _Engine(r, Side(side), r.epoch_of(start_time), max_duration, _spoof_cov(r, spoof_uncertainty),
                  goals, stop_deviation, keep_series, spoof_error, controller)
    rng = None
    if spoof_error is not None:
        rng = np.random.Generator(np.random.PCG64([spoof_error.seed, seed]))
    run = eng.new_run(rng)

    def outcome(run, f):
        return eng.outcome(run, d=d, f=f, mode=mode.value)

    if mode is Mode.STAGE1_ONLY:
        eng.drive(run, lambda run, g: d)
        o = outcome(run, 1.0)
        return [o if f == 1.0 else _with_f(o, f) for f in fs]

    if mode is Mode.STAGE2_ONLY:
        run.stage, run.stage2_epoch, run.stage2_time = 2, eng.epoch0, eng.start_time
        outs = []
        for f in fs:
            branch = run.clone()
            eng.drive(branch, lambda run, g, f=f: _stage2(run, d, f))
            outs.append(outcome(branch, f))
        return outs

    def stage1(run, g):
        if run.window_max > trigger_threshold:
            return _PAUSE
        return d

    finished = eng.drive(run, stage1)
    if finished:
        return [outcome(run, f) for f in fs]
    g = int(r.gps_idx[run.epoch])
    run.stage, run.i = 2, 0
    run.stage2_epoch, run.stage2_time = run.epoch, float(r.t[g])
    outs = []
    for k, f in enumerate(fs):
        branch = run if k == len(fs) - 1 else run.clone()
        eng.drive(branch, lambda run, g, f=f: _stage2(run, d, f))
        outs.append(outcome(branch, f))
    return outs


def _with_f(o: AttackOutcome, f: float) -> AttackOutcome:
    from dataclasses import replace
    return replace(o, f=float(f))


def fusion_ripper(trace, start_time: float, cfg: AttackConfig, kf_config: KfConfig | None = None, *,
                  goals: Sequence[float] = DEFAULT_GOALS, stop_deviation: float | None = None,
                  keep_series: bool = True, spoof_error: SpoofErrorModel | None = None,
                  seed: int = 0) -> AttackOutcome:
    """Two-stage FusionRipper attack from ``start_time`` (a GPS epoch).

    ``trace`` may be a :class:`Trace` or a prepared :class:`Replay`; the
    latter saves re-running the baseline when many attacks share a trace.
    """
    return fusion_ripper_batch(
        trace, start_time, cfg.d, [cfg.f], side=cfg.side, mode=cfg.mode,
        trigger_threshold=cfg.trigger_threshold, spoof_uncertainty=cfg.spoof_uncertainty,
        max_duration=cfg.max_duration, goals=goals, stop_deviation=stop_deviation,
        keep_series=keep_series, spoof_error=spoof_error, seed=seed, kf_config=kf_config)[0]


def scheduled_attack(trace, start_time: float, deltas: Callable[[int], float | None] | Sequence, *,
                     side: Side = Side.LEFT, spoof_uncertainty=None, max_duration: float = 120.0,
                     goals: Sequence[float] = DEFAULT_GOALS, keep_series: bool = True,
                     kf_config: KfConfig | None = None) -> AttackOutcome:
    """Spoof with an explicit per-epoch distance sequence (``None`` forwards the real fix).

    ``deltas`` is a sequence indexed by epoch offset (exhausted means
    authentic GPS) or a callable of the offset.
    """
    r = _as_replay(trace, kf_config)
    eng = _Engine(r, Side(side), r.epoch_of(start_time), max_duration, _spoof_cov(r, spoof_uncertainty),
                  goals, None, keep_series)
    run = eng.new_run()
    seq = deltas

    def schedule(run, g):
        k = run.epoch - eng.epoch0
        if callable(seq):
            return seq(k)
        return seq[k] if k < len(seq) else AUTHENTIC

    eng.drive(run, schedule)
    return eng.outcome(run, d=0.0, f=1.0, mode="scheduled")


# -- random baseline -------------------------------------------------------------

def random_attack(trace, start_time: float, range_max: float, seed: int, kf_config: KfConfig | None = None, *,
                  side: Side = Side.LEFT, spoof_uncertainty=None, max_duration: float = 120.0,
                  goals: Sequence[float] = DEFAULT_GOALS, stop_deviation: float | None = None,
                  keep_series: bool = True, trial: int = 0) -> AttackOutcome:
    """Spoof each GPS epoch with ``delta ~ Uniform(0, range_max)`` on ``side``."""
    if range_max < 0:
        raise ValueError("range_max must be non-negative")
    r = _as_replay(trace, kf_config)
    side = Side(side)
    e0 = r.epoch_of(start_time)
    eng = _Engine(r, side, e0, max_duration, _spoof_cov(r, spoof_uncertainty), goals, stop_deviation, keep_series)
    rng = np.random.Generator(np.random.PCG64([seed, e0, 0 if side is Side.LEFT else 1]))
    run = eng.new_run()
    eng.drive(run, lambda run, g: rng.uniform(0.0, range_max) if range_max > 0 else 0.0)
    return eng.outcome(run, d=range_max, f=1.0, mode="random", trial=trial)


# -- closed loop -----------------------------------------------------------------

def closed_loop_attack(trace, start_time: float, cfg: AttackConfig, ctrl: ControllerConfig,
                       kf_config: KfConfig | None = None, *, goals: Sequence[float] = DEFAULT_GOALS,
                       stop_deviation: float | None = None, keep_series: bool = True
                       ) -> tuple[AttackOutcome, tuple[np.ndarray, np.ndarray]]:
    """FusionRipper against a victim whose steering follows the attacked estimate.

    The controller keeps the attacked estimate near the lane centre, so the
    physical car drifts away from the spoofed side. The returned outcome
    therefore measures deviation as the physical offset from the lane centre
    toward the side opposite ``cfg.side``; trigger and success both use it.
    The second element is the signed (left-positive) physical offset series
    at measurement events.
    """
    r = _as_replay(trace, kf_config)
    outs = fusion_ripper_batch(
        r, start_time, cfg.d, [cfg.f], side=cfg.side, mode=cfg.mode,
        trigger_threshold=cfg.trigger_threshold, spoof_uncertainty=cfg.spoof_uncertainty,
        max_duration=cfg.max_duration, goals=goals, stop_deviation=stop_deviation,
        keep_series=True, controller=ctrl)
    o = outs[0]
    phys = (o.times.copy(), -Side(cfg.side).sign * o.deviations)
    if not keep_series:
        from dataclasses import replace
        o = replace(o, times=np.zeros(0), deviations=np.zeros(0))
    return o, phys


def closed_loop_drive(trace, start_time: float, ctrl: ControllerConfig, duration: float,
                      kf_config: KfConfig | None = None, *, initial_offset: float = 0.0,
                      deltas: Sequence | None = None, side: Side = Side.LEFT
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop drive without FusionRipper; returns ``(times, physical offset)``.

    ``initial_offset`` displaces both the car and its estimate sideways at
    the start; ``deltas`` optionally spoofs the first epochs.
    """
    r = _as_replay(trace, kf_config)
    eng = _Engine(r, Side(side), r.epoch_of(start_time), duration, median_gps_uncertainty(r.trace),
                  (), None, True, controller=ctrl)
    run = eng.new_run(initial_offset=initial_offset)
    seq = list(deltas or [])

    def schedule(run, g):
        k = run.epoch - eng.epoch0
        return seq[k] if k < len(seq) else AUTHENTIC

    eng.drive(run, schedule)
    o = eng.outcome(run, d=0.0, f=1.0, mode="drive")
    return o.times, -Side(side).sign * o.deviations


# -- baseline and exhaustive search ----------------------------------------------

def run_baseline(trace: Trace, kf_config: KfConfig | None = None) -> list[tuple[float, MsfState]]:
    """Non-attacked filter output after every LiDAR and GPS update."""
    if len(trace) == 0:
        return []
    r = _as_replay(trace, kf_config)
    filt = r.initial_filter()
    out = []
    prev = 0
    for i in np.flatnonzero(r.meas_mask):
        r.advance_quiet(filt, prev, i + 1)
        prev = i + 1
        out.append((float(r.t[i]), filt.state))
    return out


def exhaustive_window_search(trace, window_start: float, n_points: int = 10,
                             kf_config: KfConfig | None = None, *, spoof_uncertainty=None,
                             candidates: Sequence[float] | None = None,
                             forced_deltas: Sequence[float] | None = None,
                             return_log: bool = False):
    """Greedy per-epoch search for the most deviating spoof sequence.

    At each of ``n_points`` GPS epochs every candidate distance on both
    sides is applied to a clone of the attacked filter, which then replays
    the rest of the epoch; the candidate with the largest absolute deviation
    at the epoch's last event is committed. Candidates rejected by the gate
    all leave the same state, so they are evaluated once.

    Returns ``(max_dev_series, best_deltas)`` with signed (left-positive)
    distances; with ``return_log=True`` a :class:`WindowLog` is appended.
    """
    r = _as_replay(trace, kf_config)
    e0 = r.epoch_of(window_start)
    if n_points < 1 or e0 + n_points > len(r.gps_idx):
        raise ValueError("search window exceeds the trace")
    cov = _spoof_cov(r, spoof_uncertainty)
    rx, ry = float(cov[0, 0]), float(cov[1, 1])
    if candidates is None:
        candidates = np.round(np.arange(0.0, 10.0 + 1e-9, 0.04), 10)
    mags = [float(c) for c in candidates if c > 0]
    signed = [0.0] + [s * c for c in mags for s in (1.0, -1.0)]
    kf = r.kf
    discard = kf.outlier_weight == 0.0

    filt = r.fork(e0)
    devs, chosen = [], []
    p_tr, r_lid, d_lid, imu = [], [], [], []
    for k in range(n_points):
        e = e0 + k
        g = int(r.gps_idx[e])
        end = int(r.gps_idx[e + 1]) if e + 1 < len(r.gps_idx) else r.n
        last = end - 1
        nx, ny = r.nx[g], r.ny[g]
        tx, ty = r.lane_x[g], r.lane_y[g]
        p_tr.append(float(np.trace(filt.P)))
        seg = slice(g + 1, end)
        lid = np.flatnonzero(r.kind[seg] == LIDAR) + g + 1
        r_lid.append(float(np.mean(r.data[lid, 2:4])) if len(lid) else 0.0)
        d_lid.append(float(np.mean(np.hypot(r.data[lid, 0] - r.base_px[lid], r.data[lid, 1] - r.base_py[lid])))
                     if len(lid) else 0.0)
        im = np.flatnonzero(r.kind[seg] == IMU) + g + 1
        imu.append(float(np.mean(np.hypot(r.data[im, 0], r.data[im, 1]))) if len(im) else 0.0)

        if forced_deltas is not None:
            options = [float(forced_deltas[k])]
        else:
            options = signed
        best = None
        rejected = None
        for delta in options:
            zx, zy = tx + delta * nx, ty + delta * ny
            if discard:
                chi2 = _kernels.innovation_stats(filt.x, filt.P, zx, zy, rx, ry)[6]
                if chi2 > kf.chi2_threshold:
                    if rejected is None:
                        c = filt.copy()
                        r.advance_quiet(c, g + 1, end)
                        rejected = (abs(r.deviation_at(last, c.x)), c)
                    dev, c = rejected
                    if best is None or dev > best[0]:
                        best = (dev, c, delta)
                    continue
            c = filt.copy()
            c.measure((zx, zy), (rx, ry))
            r.advance_quiet(c, g + 1, end)
            dev = abs(r.deviation_at(last, c.x))
            if best is None or dev > best[0]:
                best = (dev, c, delta)
        devs.append(best[0])
        chosen.append(best[2])
        filt = best[1]
    series, deltas = np.asarray(devs), np.asarray(chosen)
    if return_log:
        return series, deltas, WindowLog(np.asarray(p_tr), np.asarray(r_lid), np.asarray(d_lid), np.asarray(imu))
    return series, deltas
