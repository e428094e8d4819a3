"""Campaigns: the attack sweeps behind every report the CLI writes.

Each campaign takes a prepared :class:`Replay`, a list of start times and
plain parameters, and returns outcomes or summary rows. Nothing here writes
files; :mod:`msfspoof.cli` does that. Independent runs can fan out over
worker processes with ``jobs > 1``; results come back in task order, so the
output is the same for any ``jobs``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import config as C
from .analysis import (FactorSample, extract_factors, fit_exponential, random_success_rate,
                       success_metrics)
from .attack import (AttackConfig, AttackOutcome, DEFAULT_GOALS, Mode, Side, SpoofErrorModel,
                     closed_loop_attack, exhaustive_window_search, fusion_ripper_batch, random_attack)
from .msf_core import KfConfig
from .profiler import ProfilingConfig, ProfilingResult, offline_profile, trace_trial_runner
from .replay import Replay
from .trace import (Trace, UnconfidentPeriod, generate_synthetic_trace, inject_unconfident_periods,
                    strip_lidar)
from .vehicle import ControllerConfig

SIDES = (Side.LEFT, Side.RIGHT)


def unconfident_trace(cfg: dict | None = None) -> Trace:
    """The default campaign trace: synthetic drive with periodic unconfident LiDAR periods."""
    cfg = cfg if cfg is not None else C.defaults()
    duration, periods, seed = C.unconfident_layout(cfg)
    base = generate_synthetic_trace(duration, C.scenario(cfg), C.noise_model(cfg))
    return inject_unconfident_periods(base, periods, seed)


def eligible_starts(replay: Replay, max_duration: float) -> list[float]:
    """GPS epochs that leave a full ``max_duration`` attack before the trace ends."""
    if replay.n == 0:
        return []
    t_end = float(replay.t[-1])
    return [float(t) for t in replay.gps_t if t + max_duration <= t_end + 1e-9]


# -- process fan-out ---------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(trace: Trace, kf: KfConfig):
    _WORKER["replay"] = Replay(trace, kf)


def _call(args):
    fn, task = args
    return fn(_WORKER["replay"], task)


def default_jobs() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


def fan_out(fn: Callable, replay: Replay, tasks: Sequence, jobs: int = 1) -> list:
    """``[fn(replay, t) for t in tasks]``, optionally spread over processes.

    ``fn`` must be a module-level function so workers can import it.
    """
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(replay, t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                             initargs=(replay.trace, replay.kf)) as pool:
        return list(pool.map(_call, [(fn, t) for t in tasks], chunksize=max(1, len(tasks) // (4 * jobs))))


# -- FusionRipper grids ------------------------------------------------------------

@dataclass(frozen=True)
class GridTask:
    start: float
    d: float
    fs: tuple[float, ...]
    side: str
    mode: str = Mode.FULL.value
    max_duration: float = 120.0
    trigger: float = 0.295
    goals: tuple[float, ...] = DEFAULT_GOALS
    stop: float | None = None
    error_multiplier: float = 0.0
    error_seed: int = 0
    pos_sigma: float = 0.058
    var_sigma: float = 0.008


def _grid_task(replay: Replay, t: GridTask) -> list[AttackOutcome]:
    err = None
    if t.error_multiplier > 0:
        err = SpoofErrorModel(t.pos_sigma, t.var_sigma, t.error_multiplier, t.error_seed)
    # the spoof-error stream is keyed by start and side so runs stay independent
    seed = int(round(t.start * 1000)) * 2 + (0 if t.side == Side.LEFT.value else 1)
    return fusion_ripper_batch(replay, t.start, t.d, t.fs, side=Side(t.side), mode=Mode(t.mode),
                               trigger_threshold=t.trigger, max_duration=t.max_duration,
                               goals=t.goals, stop_deviation=t.stop, spoof_error=err, seed=seed)


def ripper_grid(replay: Replay, starts: Sequence[float], grid_d: Sequence[float],
                grid_f: Sequence[float], *, mode: Mode = Mode.FULL, trigger: float = 0.295,
                max_duration: float = 120.0, goals: Sequence[float] = DEFAULT_GOALS,
                spoof_error: SpoofErrorModel | None = None, jobs: int = 1) -> list[AttackOutcome]:
    """FusionRipper over every (start, d, f, side).

    Runs stop once the largest goal is reached, so the outcomes carry
    success times and maxima but no deviation series.
    """
    mode = Mode(mode)
    fs = tuple(float(f) for f in grid_f)
    if mode is Mode.STAGE1_ONLY:
        fs = (1.0,)
    err = dict(error_multiplier=spoof_error.multiplier, error_seed=spoof_error.seed,
               pos_sigma=spoof_error.pos_sigma, var_sigma=spoof_error.var_sigma) if spoof_error else {}
    tasks = [GridTask(float(s), float(d), fs, side.value, mode.value, max_duration, trigger,
                      tuple(goals), max(goals), **err)
             for d in grid_d for s in starts for side in SIDES]
    out = []
    for chunk in fan_out(_grid_task, replay, tasks, jobs):
        out.extend(chunk)
    return out


# -- random baseline ---------------------------------------------------------------

@dataclass(frozen=True)
class RandomTask:
    start: float
    side: str
    range_max: float
    trial: int
    max_duration: float
    goals: tuple[float, ...]


def _random_task(replay: Replay, t: RandomTask) -> AttackOutcome:
    return random_attack(replay, t.start, t.range_max, t.trial, side=Side(t.side),
                         max_duration=t.max_duration, goals=t.goals, stop_deviation=max(t.goals),
                         keep_series=False, trial=t.trial)


def random_baseline(replay: Replay, starts: Sequence[float], range_max: float = 10.0, trials: int = 30, *,
                    max_duration: float = 120.0, goals: Sequence[float] = DEFAULT_GOALS,
                    jobs: int = 1) -> list[AttackOutcome]:
    """``trials`` seeded random attacks from every start on both sides; trial ``k`` uses seed ``k``."""
    tasks = [RandomTask(float(s), side.value, float(range_max), k, max_duration, tuple(goals))
             for k in range(trials) for s in starts for side in SIDES]
    return fan_out(_random_task, replay, tasks, jobs)


# -- robustness --------------------------------------------------------------------

@dataclass(frozen=True)
class RobustnessRow:
    multiplier: float
    mean_rate: float
    std_rate: float
    rates: tuple[float, ...]


def robustness(replay: Replay, starts: Sequence[float], d: float, f: float, *,
               multipliers: Sequence[float] = (1.0, 2.0, 3.0), repetitions: int = 100,
               goal: float = DEFAULT_GOALS[0], min_duration: float = 120.0, trigger: float = 0.295,
               pos_sigma: float = 0.058, var_sigma: float = 0.008, jobs: int = 1) -> list[RobustnessRow]:
    """Success rate of one (d, f) under spoofing inaccuracy; repetition ``k`` seeds the error model with ``k``.

    A multiplier of 0 gives the error-free reference.
    """
    rows = []
    for m in multipliers:
        rates = []
        reps = repetitions if m > 0 else 1
        for k in range(reps):
            err = SpoofErrorModel(pos_sigma, var_sigma, float(m), k) if m > 0 else None
            outs = ripper_grid(replay, starts, [d], [f], trigger=trigger, max_duration=min_duration,
                               goals=(goal,), spoof_error=err, jobs=jobs)
            rates.append(success_metrics(outs, goal, min_duration).rate(d, f))
        rows.append(RobustnessRow(float(m), float(np.mean(rates)), float(np.std(rates)), tuple(rates)))
    return rows


# -- closed loop -------------------------------------------------------------------

@dataclass(frozen=True)
class ClosedLoopTask:
    start: float
    side: str
    d: float
    f: float
    trigger: float
    max_duration: float
    goals: tuple[float, ...]
    ctrl: ControllerConfig


def _closed_loop_task(replay: Replay, t: ClosedLoopTask) -> AttackOutcome:
    cfg = AttackConfig(t.d, t.f, side=Side(t.side), trigger_threshold=t.trigger, max_duration=t.max_duration)
    o, _ = closed_loop_attack(replay, t.start, cfg, t.ctrl, goals=t.goals, stop_deviation=max(t.goals),
                              keep_series=False)
    return o


def closed_loop(replay: Replay, starts: Sequence[float], d: float, f: float, ctrl: ControllerConfig, *,
                trigger: float = 0.295, max_duration: float = 120.0,
                goals: Sequence[float] = DEFAULT_GOALS, jobs: int = 1) -> list[AttackOutcome]:
    """Closed-loop FusionRipper from every start on both sides."""
    tasks = [ClosedLoopTask(float(s), side.value, float(d), float(f), trigger, max_duration, tuple(goals), ctrl)
             for s in starts for side in SIDES]
    return fan_out(_closed_loop_task, replay, tasks, jobs)


# -- ablation ----------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    variant: str
    d: float
    f: float
    rate: float


def ablation(replay: Replay, starts: Sequence[float], grid_d: Sequence[float], grid_f: Sequence[float], *,
             goal: float = DEFAULT_GOALS[0], min_duration: float = 120.0, trigger: float = 0.295,
             jobs: int = 1) -> list[AblationRow]:
    """Best success rate over the grid for the full attack and for each stage alone."""
    rows = []
    for mode, name in ((Mode.FULL, "full"), (Mode.STAGE1_ONLY, "stage1_only"), (Mode.STAGE2_ONLY, "stage2_only")):
        outs = ripper_grid(replay, starts, grid_d, grid_f, mode=mode, trigger=trigger,
                           max_duration=min_duration, goals=(goal,), jobs=jobs)
        best = success_metrics(outs, goal, min_duration).best
        rows.append(AblationRow(name, best.d, best.f, best.rate))
    return rows


# -- upper bound -------------------------------------------------------------------

@dataclass(frozen=True)
class WindowResult:
    start: float
    max_deviation: float
    fitted_base: float
    deviations: tuple[float, ...]
    deltas: tuple[float, ...]


@dataclass(frozen=True)
class WindowTask:
    start: float
    n_points: int
    candidates: tuple[float, ...] | None


def _window_task(replay: Replay, t: WindowTask) -> WindowResult:
    devs, deltas = exhaustive_window_search(replay, t.start, t.n_points, candidates=t.candidates)
    return WindowResult(t.start, float(devs.max()), fit_exponential(devs).a,
                        tuple(float(v) for v in devs), tuple(float(v) for v in deltas))


def window_starts(replay: Replay, n_points: int, stride: int = 1) -> list[float]:
    """Start epochs of every ``n_points``-epoch window, advancing ``stride`` epochs at a time."""
    return [float(t) for t in replay.gps_t[: max(0, len(replay.gps_t) - n_points + 1): stride]]


def upper_bound(replay: Replay, *, n_points: int = 10, stride: int = 1,
                candidates: Sequence[float] | None = None, jobs: int = 1) -> list[WindowResult]:
    """Greedy exhaustive search over every window of the trace."""
    cand = None if candidates is None else tuple(float(c) for c in candidates)
    tasks = [WindowTask(s, n_points, cand) for s in window_starts(replay, n_points, stride)]
    return fan_out(_window_task, replay, tasks, jobs)


def gps_only(trace: Trace) -> Trace:
    return strip_lidar(trace)


# -- contributing factors ----------------------------------------------------------

def factor_ensemble(n_windows: int = 200, *, seed: int = 11, scales: Sequence[float] = (1.0, 3.0, 10.0, 30.0, 100.0),
                    n_points: int = 10, candidates: Sequence[float] | None = None,
                    cfg: dict | None = None) -> list[FactorSample]:
    """Windows over traces whose LiDAR confidence is degraded by varying amounts.

    Every window gets its own unconfident period with a LiDAR variance scale
    drawn from ``scales`` (the bias grows with the square root of the
    scale). The period starts two epochs before the window, so the window
    inherits the inflated covariance. Windows are searched exhaustively and
    reduced to factor samples labeled by the fitted base.
    """
    cfg = cfg if cfg is not None else C.defaults()
    kf = C.kf_config(cfg)
    rng = np.random.Generator(np.random.PCG64(seed))
    bias0 = float(C.get(cfg, "unconfident.lidar_bias_sigma", 0.3)) / 10.0
    spacing, lead, length = 30.0, 2.0, float(n_points + 2)
    per_trace = 10
    samples = []
    k = 0
    while len(samples) < n_windows:
        m = min(per_trace, n_windows - len(samples))
        draws = rng.choice(np.asarray(scales, dtype=float), size=m)
        duration = spacing * (m + 1)
        periods = [UnconfidentPeriod(spacing * (j + 1) - lead, spacing * (j + 1) - lead + length,
                                     float(s), bias0 * math.sqrt(float(s)))
                   for j, s in enumerate(draws)]
        noise = C.noise_model(cfg, seed=int(rng.integers(2**31)))
        tr = inject_unconfident_periods(generate_synthetic_trace(duration, C.scenario(cfg), noise),
                                        periods, int(rng.integers(2**31)))
        rep = Replay(tr, kf)
        for j in range(m):
            devs, _, log = exhaustive_window_search(rep, spacing * (j + 1), n_points,
                                                    candidates=candidates, return_log=True)
            samples.append(extract_factors(log, devs))
        k += 1
    return samples


# -- profiling ---------------------------------------------------------------------

def profile(replays: Sequence[Replay], pcfg: ProfilingConfig, seed: int = 0) -> ProfilingResult:
    return offline_profile(trace_trial_runner(replays, pcfg, seed), pcfg)


__all__ = [
    "AblationRow", "ClosedLoopTask", "GridTask", "RandomTask", "RobustnessRow", "WindowResult",
    "ablation", "closed_loop", "default_jobs", "eligible_starts", "factor_ensemble", "fan_out",
    "gps_only", "profile", "random_baseline", "random_success_rate", "ripper_grid", "robustness",
    "success_metrics", "unconfident_trace", "upper_bound", "window_starts",
]
