"""Offline attack-parameter profiling with safe, self-stopping trials.

The attacker cannot try the real attack during profiling, so each trial
spoofs only until the victim's deviation crosses a small safe threshold and
then hands GPS back to the authentic signal. :func:`offline_profile` walks
the ``(d, f)`` grid and stops at the first cell whose trial success rate is
high enough.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .attack import AUTHENTIC, DEFAULT_TRIGGER, Side, _as_replay, _Engine, _spoof_cov
from .msf_core import KfConfig
from .replay import Replay


class ContractViolation(ValueError):
    """A trial runner returned a count outside ``[0, N]``."""


def _default_grid(start, stop, step):
    n = int(round((stop - start) / step))
    return tuple(round(start + k * step, 9) for k in range(n + 1))


@dataclass(frozen=True)
class ProfilingConfig:
    grid_d: Sequence[float] = _default_grid(0.3, 2.0, 0.1)
    grid_f: Sequence[float] = _default_grid(1.1, 2.0, 0.1)
    trials_per_round: int = 40
    min_success_rate: float = 0.5
    safe_threshold: float = 0.45
    trial_cap: float = 90.0

    def __post_init__(self):
        for name in ("grid_d", "grid_f"):
            g = tuple(float(v) for v in getattr(self, name))
            if not g or any(b <= a for a, b in zip(g, g[1:])):
                raise ValueError(f"{name} must be non-empty and ascending")
            object.__setattr__(self, name, g)
        if self.trials_per_round < 1:
            raise ValueError("trials_per_round must be at least 1")
        if not 0 < self.min_success_rate <= 1:
            raise ValueError("min_success_rate must lie in (0, 1]")
        if not self.safe_threshold > 0:
            raise ValueError("safe_threshold must be positive")
        if not self.trial_cap > 0:
            raise ValueError("trial_cap must be positive")


@dataclass(frozen=True)
class RoundRecord:
    d: float
    f: float
    successes: int
    rate: float


@dataclass(frozen=True)
class ProfilingResult:
    d: float
    f: float
    cost: int
    best_rate: float
    exhausted: bool
    rounds: tuple[RoundRecord, ...] = field(default=())

    def to_json(self) -> str:
        body = {"d": self.d, "f": self.f, "cost": self.cost, "best_rate": self.best_rate,
                "exhausted": self.exhausted, "rounds": len(self.rounds)}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    def session_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "f", "d", "successes", "rate"])
        for k, rec in enumerate(self.rounds, 1):
            w.writerow([k, f"{rec.f:g}", f"{rec.d:g}", rec.successes, f"{rec.rate:.6f}"])
        return buf.getvalue()


TrialRunner = Callable[[float, float, int, float], int]


def offline_profile(trial_runner: TrialRunner, cfg: ProfilingConfig = ProfilingConfig()) -> ProfilingResult:
    """Grid walk with ``f`` outer and ``d`` inner, both ascending.

    Returns the first cell whose success rate reaches ``min_success_rate``.
    Otherwise returns the cell with the strictly highest rate seen, which
    stays at the grid minimum if every round fails. ``cost`` counts trials.
    """
    N, T, S = cfg.trials_per_round, cfg.safe_threshold, cfg.min_success_rate
    best_d, best_f = cfg.grid_d[0], cfg.grid_f[0]
    best_rate = 0.0
    cost = 0
    rounds = []
    for f in cfg.grid_f:
        for d in cfg.grid_d:
            count = trial_runner(d, f, N, T)
            if isinstance(count, (bool, np.bool_)) or int(count) != count or not 0 <= count <= N:
                raise ContractViolation(f"trial runner returned {count!r} for N={N}")
            count = int(count)
            cost += N
            rate = count / N
            rounds.append(RoundRecord(d, f, count, rate))
            if rate >= S:
                return ProfilingResult(d, f, cost, rate, False, tuple(rounds))
            if rate > best_rate:
                best_d, best_f, best_rate = d, f, rate
    return ProfilingResult(best_d, best_f, cost, best_rate, True, tuple(rounds))


def safe_trial(trace, start: float, d: float, f: float, cfg: ProfilingConfig = ProfilingConfig(),
               kf_config: KfConfig | None = None, *, side: Side = Side.LEFT,
               trigger_threshold: float = DEFAULT_TRIGGER, spoof_uncertainty=None,
               return_outcome: bool = False):
    """One profiling trip: FusionRipper until the deviation reaches the safe threshold.

    After that, every GPS epoch forwards the authentic fix and the other
    sensors pull the estimate back. The trip ends at ``trial_cap`` seconds
    or at the end of the trace. Returns whether the threshold was reached
    (and the :class:`AttackOutcome` when ``return_outcome`` is set).
    """
    r = _as_replay(trace, kf_config)
    T = cfg.safe_threshold
    eng = _Engine(r, Side(side), r.epoch_of(start), cfg.trial_cap, _spoof_cov(r, spoof_uncertainty),
                  (T,), None, return_outcome)
    run = eng.new_run()

    def schedule(run, g):
        if run.best >= T:
            return AUTHENTIC
        if run.stage == 1 and run.window_max > trigger_threshold:
            run.stage, run.i = 2, 0
            run.stage2_epoch, run.stage2_time = run.epoch, float(r.t[g])
        if run.stage == 1:
            return d
        delta = d * f ** run.i
        run.i += 1
        return delta

    eng.drive(run, schedule)
    reached = bool(run.best >= T)
    if return_outcome:
        return reached, eng.outcome(run, d=d, f=f, mode="safe_trial")
    return reached


def eligible_epochs(replay: Replay, duration: float) -> list[float]:
    """GPS epochs with at least ``duration`` seconds of trace after them."""
    t_end = float(replay.t[-1]) if replay.n else 0.0
    return [float(t) for t in replay.gps_t if t + duration <= t_end + 1e-9]


def trace_trial_runner(replays: Sequence[Replay], cfg: ProfilingConfig, seed: int = 0) -> TrialRunner:
    """Trial runner over real traces: each round samples N (trace, start, side) triples."""
    pool = [(k, s) for k, rep in enumerate(replays) for s in eligible_epochs(rep, cfg.trial_cap)]
    if not pool:
        raise ValueError("no start point leaves room for a full trial")
    rng = np.random.Generator(np.random.PCG64(seed))

    def run(d: float, f: float, n: int, threshold: float) -> int:
        picks = rng.integers(0, len(pool), n)
        sides = rng.integers(0, 2, n)
        c = ProfilingConfig(cfg.grid_d, cfg.grid_f, cfg.trials_per_round, cfg.min_success_rate,
                            threshold, cfg.trial_cap)
        hits = 0
        for p, s in zip(picks, sides):
            k, start = pool[int(p)]
            hits += safe_trial(replays[k], start, d, f, c, side=Side.LEFT if s == 0 else Side.RIGHT)
        return hits

    return run


def planted_trial_runner(rates: Callable[[float, float], float], seed: int = 0) -> TrialRunner:
    """Trial runner whose successes are Binomial(N, rates(d, f)); for validating the search."""
    rng = np.random.Generator(np.random.PCG64(seed))

    def run(d: float, f: float, n: int, threshold: float) -> int:
        p = float(rates(d, f))
        return int(rng.binomial(n, min(max(p, 0.0), 1.0)))

    return run
