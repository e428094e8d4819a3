"""Trace replay against a baseline (non-attacked) filter.

:class:`Replay` runs the clean filter over a trace once, keeps its output at
every event and a snapshot of its state before every GPS epoch, so attacked
runs can fork from any starting epoch and measure lateral deviation from the
baseline trajectory without re-running it.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from ._kernels import GPS, LIDAR, TRUTH
from .msf_core import FusionFilter, KfConfig, MsfState
from .trace import Trace


class Replay:
    def __init__(self, trace: Trace, kf: KfConfig):
        if not kf.uses_default_h:
            raise ValueError("replay supports the default position observation model only")
        self.trace = trace
        self.kf = kf
        self.kind, self.t, self.data = trace.kind, trace.t, trace.data
        n = len(trace)
        self.n = n
        self.gps_idx = trace.indices(GPS)
        self.gps_t = self.t[self.gps_idx]
        self.meas_mask = (self.kind == GPS) | (self.kind == LIDAR)

        if n:
            truth_pos, heading = trace.truth_at(self.t)
        else:
            truth_pos, heading = np.zeros((0, 2)), np.zeros(0)
        self.truth_pos = truth_pos
        self.truth_heading = heading
        self.lane_x = np.ascontiguousarray(truth_pos[:, 0])
        self.lane_y = np.ascontiguousarray(truth_pos[:, 1])
        # left-hand unit normal of the direction of travel
        self.nx = -np.sin(heading)
        self.ny = np.cos(heading)
        self.speed = self._truth_speed()

        self.base_px = np.zeros(n)
        self.base_py = np.zeros(n)
        self.base_trp = np.zeros(n)
        self.base_chi2 = np.full(n, np.nan)
        self.base_status = np.full(n, -2, dtype=np.int64)
        # scratch buffers shared by attacked runs (single-threaded)
        self.px = np.zeros(n)
        self.py = np.zeros(n)
        self.trp = np.zeros(n)
        self.chi2 = np.full(n, np.nan)
        self.status = np.full(n, -2, dtype=np.int64)
        self.phys = np.zeros(n)

        self.snapshots: list[tuple[np.ndarray, np.ndarray, float]] = []
        if n:
            self._run_baseline()

    def _truth_speed(self) -> np.ndarray:
        idx = self.trace.indices(TRUTH)
        if not len(idx):
            return np.zeros(self.n)
        tt = self.t[idx]
        sp = np.hypot(self.data[idx, 2], self.data[idx, 3])
        return np.interp(self.t, tt, sp)

    def initial_filter(self) -> FusionFilter:
        pose = self.trace.initial_pose()
        state = MsfState(pose.position, pose.velocity, pose.heading,
                         self.kf.initial_covariance, pose.timestamp)
        return FusionFilter(state, self.kf)

    def _run_baseline(self):
        filt = self.initial_filter()
        prev = 0
        for g in list(self.gps_idx) + [self.n]:
            self._advance(filt, prev, g, baseline=True)
            if g < self.n:
                self.snapshots.append((filt.x.copy(), filt.P.copy(), float(filt.clock[0])))
            prev = g
        self.final_state = filt.state

    def _advance(self, filt: FusionFilter, i0: int, i1: int, baseline: bool = False):
        if i1 <= i0:
            return
        kf = self.kf
        if baseline:
            outs = (self.base_px, self.base_py, self.base_trp, self.base_chi2, self.base_status)
        else:
            outs = (self.px, self.py, self.trp, self.chi2, self.status)
        bad = _kernels.advance(self.kind, self.t, self.data, i0, i1, filt.x, filt.P, filt.clock,
                               kf.process_noise, kf.chi2_threshold, kf.outlier_weight, *outs)
        if bad >= 0:
            raise np.linalg.LinAlgError(f"singular innovation covariance at event {bad}")

    def advance(self, filt: FusionFilter, i0: int, i1: int) -> None:
        """Replay events ``[i0, i1)`` into ``filt``, recording into the scratch buffers."""
        self._advance(filt, i0, i1)

    def advance_quiet(self, filt: FusionFilter, i0: int, i1: int) -> None:
        if i1 <= i0:
            return
        kf = self.kf
        bad = _kernels.advance_quiet(self.kind, self.t, self.data, i0, i1, filt.x, filt.P, filt.clock,
                                     kf.process_noise, kf.chi2_threshold, kf.outlier_weight)
        if bad >= 0:
            raise np.linalg.LinAlgError(f"singular innovation covariance at event {bad}")

    def advance_closed_loop(self, filt: FusionFilter, i0: int, i1: int, ctrl: np.ndarray, plant: np.ndarray) -> None:
        """Replay ``[i0, i1)`` with the steering loop closed; physical offsets go to ``self.phys``."""
        if i1 <= i0:
            return
        kf = self.kf
        bad = _kernels.advance_closed_loop(
            self.kind, self.t, self.data, i0, i1, filt.x, filt.P, filt.clock,
            kf.process_noise, kf.chi2_threshold, kf.outlier_weight,
            self.lane_x, self.lane_y, self.nx, self.ny, self.truth_heading,
            self.speed, ctrl, plant, self.phys)
        if bad >= 0:
            raise np.linalg.LinAlgError(f"singular innovation covariance at event {bad}")

    def fork(self, epoch: int) -> FusionFilter:
        """Baseline filter state just before GPS epoch ``epoch``."""
        x, P, clock = self.snapshots[epoch]
        f = self.initial_filter()
        f.x[:] = x
        f.P[:] = P
        f.clock[0] = clock
        return f

    def epoch_of(self, start_time: float) -> int:
        e = int(np.searchsorted(self.gps_t, start_time))
        if e >= len(self.gps_t) or abs(self.gps_t[e] - start_time) > 1e-6:
            raise ValueError(f"start time {start_time} is not a GPS epoch")
        return e

    def deviation_at(self, i: int, x: np.ndarray) -> float:
        """Signed (left-positive) lateral offset of position ``x`` from the baseline at event ``i``."""
        return float(self.nx[i] * (x[0] - self.base_px[i]) + self.ny[i] * (x[1] - self.base_py[i]))

    def deviations(self, i0: int, i1: int) -> tuple[np.ndarray, np.ndarray]:
        """Scratch-buffer deviations at measurement events in ``[i0, i1)``."""
        sl = slice(i0, i1)
        m = self.meas_mask[sl]
        idx = np.arange(i0, i1)[m]
        dev = self.nx[idx] * (self.px[idx] - self.base_px[idx]) + self.ny[idx] * (self.py[idx] - self.base_py[idx])
        return idx, dev

    def end_index(self, end_time: float) -> int:
        """Index one past the last event at or before ``end_time``."""
        return int(np.searchsorted(self.t, end_time + 1e-9, side="right"))
