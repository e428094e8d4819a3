"""Post-hoc analysis of attack runs.

Road geometry and deviation goals, signed lateral deviation against a
trajectory, exponential-growth fitting and take-over labelling, the
closed-form two-spoof deviation chain, contributing-factor extraction with
Pearson and Fisher tests, and success-rate reports over parameter grids.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

TAKEOVER_BASE = 1.1
EXP_GRID = np.round(np.arange(1.0, 3.0005, 0.001), 3)


class DegenerateInputError(ValueError):
    """Input has no spread (zero variance or an empty margin)."""


# -- road geometry ---------------------------------------------------------------

class RoadType(enum.Enum):
    LOCAL = "local"
    HIGHWAY = "highway"


@dataclass(frozen=True)
class RoadGeometry:
    lane_width: float
    car_width: float
    shoulder_width: float
    road_type: RoadType = RoadType.LOCAL

    def __post_init__(self):
        if not self.lane_width > self.car_width > 0:
            raise ValueError("need lane_width > car_width > 0")
        if self.shoulder_width < 0:
            raise ValueError("shoulder_width must be non-negative")


LOCAL = RoadGeometry(2.70, 2.11, 0.60, RoadType.LOCAL)
HIGHWAY = RoadGeometry(3.60, 2.11, 1.20, RoadType.HIGHWAY)


@dataclass(frozen=True)
class GoalThresholds:
    off_road: float
    wrong_way: float
    touch_lane_line: float


def goal_thresholds(geom: RoadGeometry) -> GoalThresholds:
    """Lateral deviations needed to touch the lane line, leave the road, or enter the opposite lane.

    Values are rounded to 1e-9 m so decimal widths give decimal thresholds.
    """
    L, C, S = geom.lane_width, geom.car_width, geom.shoulder_width
    return GoalThresholds(
        off_road=round((L - C) / 2 + S, 9),
        wrong_way=round((L + C) / 2, 9),
        touch_lane_line=round((L - C) / 2, 9),
    )


# -- deviation geometry ----------------------------------------------------------

def lateral_deviation(pos, trajectory) -> float:
    """Signed distance from ``pos`` to a polyline, positive to the left of travel.

    ``trajectory`` is a sequence of poses (anything with ``.position``) or an
    ``(n, 2)`` array. The nearest segment wins; zero-length segments are
    skipped.
    """
    if len(trajectory) and hasattr(trajectory[0], "position"):
        pts = np.array([np.asarray(p.position, dtype=float) for p in trajectory])
    else:
        pts = np.asarray(trajectory, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("trajectory needs at least two poses")
    p = np.asarray(pos, dtype=float)
    a, b = pts[:-1], pts[1:]
    seg = b - a
    length2 = np.einsum("ij,ij->i", seg, seg)
    keep = length2 > 0
    if not np.any(keep):
        raise ValueError("trajectory has zero length")
    a, seg, length2 = a[keep], seg[keep], length2[keep]
    u = np.clip(np.einsum("ij,ij->i", p - a, seg) / length2, 0.0, 1.0)
    foot = a + u[:, None] * seg
    dist = np.hypot(*(p - foot).T)
    k = int(np.argmin(dist))
    rel = p - a[k]
    cross = seg[k, 0] * rel[1] - seg[k, 1] * rel[0]
    if cross == 0.0:
        return 0.0
    return float(math.copysign(dist[k], cross))


# -- exponential fit -------------------------------------------------------------

class ExpFit(NamedTuple):
    a: float
    b: float
    mse: float


_GRID_X: dict[int, np.ndarray] = {}


def _grid_powers(n: int) -> np.ndarray:
    """``EXP_GRID[:, None] ** x`` for ``x = 1..n``, cached per length."""
    m = _GRID_X.get(n)
    if m is None:
        with np.errstate(over="ignore"):
            m = EXP_GRID[:, None] ** np.arange(1, n + 1, dtype=float)[None, :]
        m.setflags(write=False)
        _GRID_X[n] = m
    return m


def _best_bases(Y: np.ndarray) -> np.ndarray:
    """Index into ``EXP_GRID`` of the least-squares base for every row of ``Y``.

    With ``b`` profiled out, the error of base ``a`` is
    ``var(y) + var(a**x) - 2 cov(y, a**x)``, so all rows are scored with
    one matrix product.
    """
    A = _grid_powers(Y.shape[1])
    Ac = A - A.mean(axis=1, keepdims=True)
    Yc = Y - Y.mean(axis=1, keepdims=True)
    with np.errstate(over="ignore", invalid="ignore"):
        score = np.mean(Ac * Ac, axis=1)[None, :] - 2.0 * (Yc @ Ac.T) / Y.shape[1]
    score = np.where(np.isfinite(score), score, np.inf)
    return np.argmin(score, axis=1)


def _exact_fit(y: np.ndarray, k: int) -> ExpFit:
    ax = _grid_powers(y.size)[k]
    b = float(np.mean(y - ax))
    return ExpFit(float(EXP_GRID[k]), b, float(np.mean((y - ax - b) ** 2)))


def _check_series(devs) -> np.ndarray:
    y = np.asarray(devs, dtype=float)
    if y.ndim != 1 or y.size < 3:
        raise ValueError("need at least three points to fit")
    if not np.all(np.isfinite(y)):
        raise ValueError("deviations must be finite")
    return y


def fit_exponential(devs: Sequence[float]) -> ExpFit:
    """Least-squares fit of ``a**x + b`` at ``x = 1..n`` over a grid of bases.

    For each candidate ``a`` the offset ``b`` is the mean residual, so the
    search is one-dimensional and exact to the grid step (0.001 on [1, 3]).
    """
    y = _check_series(devs)
    return _exact_fit(y, int(_best_bases(y[None, :])[0]))


def max_window_fit(devs: Sequence[float], n: int = 10) -> tuple[ExpFit, int]:
    """Steepest exponential episode: the fit with the largest base over all ``n``-point windows.

    Returns the fit and the index of its first point. Series shorter than
    ``n`` (but at least three points) are fitted whole.
    """
    y = _check_series(devs)
    if y.size <= n:
        return fit_exponential(y), 0
    W = np.lib.stride_tricks.sliding_window_view(y, n)
    ks = _best_bases(W)
    j = int(np.argmax(ks))
    return _exact_fit(W[j].copy(), int(ks[j])), j


def is_takeover(a: float) -> bool:
    return bool(a > TAKEOVER_BASE)


def growth_onset(fit: ExpFit, n: int) -> int:
    """Index of the first point where the fitted curve's increment doubles its initial increment.

    Returns 0 when the curve never accelerates that much within ``n`` points.
    """
    a = fit.a
    if n < 2 or a <= 1.0:
        return 0
    first = a * (a - 1.0)
    for j in range(1, n - 1):
        # increment from point j to j+1 (x = j+1 -> j+2)
        if a ** (j + 1) * (a - 1.0) > 2.0 * first:
            return j
    return 0


# -- closed-form deviation chain -------------------------------------------------

class DevChain(NamedTuple):
    dev1: np.ndarray
    dev_imu: np.ndarray
    dev_lidar: np.ndarray
    dev2: np.ndarray


def _gain(P, H, R):
    S = H @ P @ H.T + R
    S = 0.5 * (S + S.T)
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > 1e12:
        raise np.linalg.LinAlgError("innovation covariance is singular")
    return np.linalg.solve(S, H @ P).T


def closed_form_dev2(P0, R1, R1_lidar, R2, delta1, delta2, Delta_lidar, F1, H, Q=None) -> DevChain:
    """Deviation after each step of the spoof, IMU, LiDAR, spoof pipeline.

    ``Delta_lidar`` is the predicted non-attacked position minus the LiDAR fix;
    ``Q`` is the process-noise increment added by the IMU step (zero if
    omitted). The deviations are state-sized vectors measured against a
    reference filter that sees the same covariances but no spoofing and a
    LiDAR fix aligned with its own prediction.
    """
    P0 = np.asarray(P0, dtype=float)
    H = np.asarray(H, dtype=float)
    F1 = np.asarray(F1, dtype=float)
    Q = np.zeros_like(P0) if Q is None else np.asarray(Q, dtype=float)
    d1 = np.asarray(delta1, dtype=float)
    d2 = np.asarray(delta2, dtype=float)
    lid = np.asarray(Delta_lidar, dtype=float)

    K1 = _gain(P0, H, np.asarray(R1, dtype=float))
    P1 = P0 - K1 @ H @ P0
    P_imu = F1 @ P1 @ F1.T + Q
    K_lidar = _gain(P_imu, H, np.asarray(R1_lidar, dtype=float))
    P_lidar = P_imu - K_lidar @ H @ P_imu
    K2 = _gain(P_lidar, H, np.asarray(R2, dtype=float))

    dev1 = K1 @ d1
    dev_imu = F1 @ dev1
    dev_lidar = dev_imu - K_lidar @ (lid + H @ dev_imu)
    dev2 = dev_lidar + K2 @ (d2 - H @ dev_lidar)
    return DevChain(dev1, dev_imu, dev_lidar, dev2)


# -- contributing factors ----------------------------------------------------------

@dataclass(frozen=True)
class WindowLog:
    """Per-GPS-epoch quantities over an attack window.

    ``p_trace`` is trace(P) just before each spoofed update; ``r_lidar``,
    ``delta_lidar`` and ``imu`` are averages over the LiDAR fixes and IMU
    samples of the epoch that follows (LiDAR variance, distance between the
    LiDAR fix and the non-attacked estimate, acceleration magnitude).
    """

    p_trace: np.ndarray
    r_lidar: np.ndarray
    delta_lidar: np.ndarray
    imu: np.ndarray

    def __post_init__(self):
        arrays = [np.asarray(getattr(self, k), dtype=float) for k in ("p_trace", "r_lidar", "delta_lidar", "imu")]
        if len({a.shape for a in arrays}) != 1 or arrays[0].ndim != 1:
            raise ValueError("window log columns must be 1-D and equally long")
        for k, a in zip(("p_trace", "r_lidar", "delta_lidar", "imu"), arrays):
            object.__setattr__(self, k, a)

    def __len__(self):
        return len(self.p_trace)


@dataclass(frozen=True)
class FactorSample:
    p0: float
    r_lidar: float
    delta_lidar: float
    imu: float
    takeover: bool
    onset: int = 0


def extract_factors(window_log: WindowLog, outcome) -> FactorSample:
    """Factor tuple of one window.

    ``outcome`` supplies the per-epoch deviations (``max_dev_series`` or
    ``deviations``) and optionally a precomputed ``fitted_base``.
    """
    n = len(window_log)
    if n == 0:
        raise ValueError("empty window log")
    devs = _outcome_devs(outcome)
    if devs is not None and len(devs) >= 3:
        fit = fit_exponential(devs[:n])
    else:
        fit = ExpFit(float(getattr(outcome, "fitted_base", 1.0)), 0.0, 0.0)
    base = float(getattr(outcome, "fitted_base", fit.a))
    if not math.isfinite(base):
        base = fit.a
    onset = growth_onset(fit, n)
    tail = slice(onset, n)
    return FactorSample(
        p0=float(window_log.p_trace[onset]),
        r_lidar=float(np.mean(window_log.r_lidar[tail])),
        delta_lidar=float(np.mean(window_log.delta_lidar[tail])),
        imu=float(np.mean(window_log.imu[tail])),
        takeover=is_takeover(base),
        onset=onset,
    )


def _outcome_devs(outcome):
    for name in ("max_dev_series", "gps_deviations", "deviations"):
        v = getattr(outcome, name, None)
        if v is not None and len(v):
            return np.asarray(v, dtype=float)
    if isinstance(outcome, (list, tuple, np.ndarray)):
        return np.asarray(outcome, dtype=float)
    return None


# -- statistics ------------------------------------------------------------------

def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz continued fraction for the incomplete beta function
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if not (a > 0 and b > 0):
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, dof: float) -> float:
    """Two-sided tail probability ``P(|T| >= |t|)`` for Student's t."""
    if math.isinf(t):
        return 0.0
    return betainc_regularized(dof / 2.0, 0.5, dof / (dof + t * t))


def pearson(xs, ys) -> tuple[float, float]:
    """Sample correlation and its two-sided p-value (t-test, n-2 dof)."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("xs and ys must be 1-D and equally long")
    n = x.size
    if n < 3:
        raise ValueError("need at least three pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("zero variance input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return r, student_t_sf2(t, n - 2)


def _hypergeom_pmf(k: int, row1: int, col1: int, n: int) -> float:
    return math.comb(col1, k) * math.comb(n - col1, row1 - k) / math.comb(n, row1)


def fisher_exact(table) -> tuple[float, float]:
    """Odds ratio and two-sided p for a 2x2 table of counts.

    The p-value sums the hypergeometric probability of every table with the
    observed margins that is no more likely than the observed one.
    """
    t = np.asarray(table)
    if t.shape != (2, 2):
        raise ValueError("table must be 2x2")
    if np.any(t < 0) or not np.all(t == np.floor(t)):
        raise ValueError("counts must be non-negative integers")
    (a, b), (c, d) = (int(v) for v in t[0]), (int(v) for v in t[1])
    row1, row2, col1, col2 = a + b, c + d, a + c, b + d
    if min(row1, row2, col1, col2) == 0:
        raise DegenerateInputError("a margin of the table is zero")
    if b * c == 0:
        odds = math.inf if a * d > 0 else math.nan
    else:
        odds = (a * d) / (b * c)
    n = row1 + row2
    p_obs = _hypergeom_pmf(a, row1, col1, n)
    lo, hi = max(0, row1 - col2), min(row1, col1)
    total = 0.0
    for k in range(lo, hi + 1):
        pk = _hypergeom_pmf(k, row1, col1, n)
        if pk <= p_obs * (1.0 + 1e-7):
            total += pk
    return odds, min(1.0, total)


def median_split_table(values, labels) -> np.ndarray:
    """2x2 counts of (value above median, label) for Fisher's test."""
    v = np.asarray(values, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    high = v > np.median(v)
    return np.array([[np.sum(high & lab), np.sum(high & ~lab)],
                     [np.sum(~high & lab), np.sum(~high & ~lab)]])


@dataclass(frozen=True)
class FactorImportance:
    factor: str
    r: float
    r_p: float
    odds_ratio: float
    fisher_p: float


def factor_importance(samples: Sequence[FactorSample]) -> list[FactorImportance]:
    """Pearson (factor vs take-over label) and Fisher (median split vs label) per factor."""
    labels = np.array([s.takeover for s in samples], dtype=float)
    out = []
    for name in ("p0", "r_lidar", "delta_lidar", "imu"):
        vals = np.array([getattr(s, name) for s in samples])
        r, rp = pearson(vals, labels)
        odds, fp = fisher_exact(median_split_table(vals, labels.astype(bool)))
        out.append(FactorImportance(name, r, rp, odds, fp))
    return out


# -- success metrics -------------------------------------------------------------

@dataclass(frozen=True)
class ParamStats:
    d: float
    f: float
    rate: float
    mean_time: float | None
    std_time: float | None


@dataclass
class SuccessReport:
    goal: float
    min_duration: float
    d_values: list[float]
    f_values: list[float]
    rates: np.ndarray
    n_starts: int
    best: ParamStats
    top3: list[ParamStats] = field(default_factory=list)

    def rate(self, d: float, f: float) -> float:
        return float(self.rates[self._di(d), self._fi(f)])

    def _di(self, d):
        return int(np.argmin(np.abs(np.asarray(self.d_values) - d)))

    def _fi(self, f):
        return int(np.argmin(np.abs(np.asarray(self.f_values) - f)))

    def to_dict(self) -> dict:
        def stats(s: ParamStats):
            return {"d": s.d, "f": s.f, "rate": s.rate, "mean_time": s.mean_time, "std_time": s.std_time}

        return {
            "goal": self.goal,
            "min_duration": self.min_duration,
            "n_starts": self.n_starts,
            "d_values": list(self.d_values),
            "f_values": list(self.f_values),
            "rates": [[float(v) for v in row] for row in self.rates],
            "best": stats(self.best),
            "top3": [stats(s) for s in self.top3],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        """Success-rate matrix, one row per d and one column per f."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["d\\f"] + [f"{f:g}" for f in self.f_values])
        for d, row in zip(self.d_values, self.rates):
            w.writerow([f"{d:g}"] + [f"{v:.6f}" for v in row])
        return buf.getvalue()


def _key(v: float) -> float:
    return round(float(v), 9)


def start_successes(outcomes: Iterable, goal: float, min_duration: float):
    """Map ``(d, f) -> {start: success time or None}``, taking the faster side."""
    table: dict[tuple[float, float], dict[float, float | None]] = {}
    for o in outcomes:
        cell = table.setdefault((_key(o.d), _key(o.f)), {})
        s = _key(o.start_time)
        t = o.success_time(goal)
        if t is not None and t > min_duration + 1e-9:
            t = None
        prev = cell.get(s, None)
        if s not in cell or (t is not None and (prev is None or t < prev)):
            cell[s] = t
    return table


def success_metrics(outcomes: Sequence, goal: float, min_duration: float) -> SuccessReport:
    """Per-(d, f) success rate over start points.

    A start point succeeds when either side reaches ``goal`` within
    ``min_duration`` seconds of the attack start.
    """
    table = start_successes(outcomes, goal, min_duration)
    if not table:
        raise ValueError("no outcomes to summarize")
    starts = None
    for key, cell in table.items():
        if starts is None:
            starts = set(cell)
        elif set(cell) != starts:
            raise ValueError(f"parameter cell {key} covers a different set of start points")
    d_values = sorted({k[0] for k in table})
    f_values = sorted({k[1] for k in table})
    rates = np.full((len(d_values), len(f_values)), np.nan)
    stats = []
    n = len(starts)
    for (d, f), cell in sorted(table.items()):
        times = [t for t in cell.values() if t is not None]
        rate = len(times) / n
        rates[d_values.index(d), f_values.index(f)] = rate
        mean = float(np.mean(times)) if times else None
        std = float(np.std(times)) if times else None
        stats.append(ParamStats(d, f, rate, mean, std))
    ranked = sorted(stats, key=lambda s: (-s.rate, s.d, s.f))
    return SuccessReport(goal, min_duration, d_values, f_values, rates, n, ranked[0], ranked[:3])


def random_success_rate(outcomes: Sequence, goal: float, min_duration: float) -> tuple[float, list[float]]:
    """Mean over trials of the better side's success rate across start points.

    Returns ``(mean, per_trial_rates)``. Each trial's outcomes are grouped by
    side; the higher of the two side rates counts for that trial.
    """
    by_trial: dict[int, dict[str, dict[float, bool]]] = {}
    for o in outcomes:
        t = o.success_time(goal)
        ok = t is not None and t <= min_duration + 1e-9
        by_trial.setdefault(o.trial, {}).setdefault(o.side, {})[_key(o.start_time)] = ok
    if not by_trial:
        raise ValueError("no outcomes to summarize")
    rates = []
    for trial in sorted(by_trial):
        sides = by_trial[trial]
        rates.append(max(sum(v.values()) / len(v) for v in sides.values()))
    return float(np.mean(rates)), rates
