"""Compiled inner loops of the fusion filter.

The public API in :mod:`msfspoof.msf_core` wraps these; the attack engine
calls :func:`advance` directly so that the 200 Hz IMU stream never touches
the Python interpreter.

State layout is ``[px, py, vx, vy, heading]``; ``P`` is 5x5 float64.
"""

import math

import numpy as np
from numba import njit

# event kinds, shared with msfspoof.trace
TRUTH = 0
IMU = 1
LIDAR = 2
GPS = 3

# update status codes
REJECTED = 0
ACCEPTED = 1
PARTIAL = 2
SINGULAR = -1


@njit(cache=True)
def wrap_angle(a):
    """Map an angle to (-pi, pi]."""
    if -math.pi < a <= math.pi:
        return a
    a -= 2.0 * math.pi * math.floor((a + math.pi) / (2.0 * math.pi))
    if a <= -math.pi:
        a += 2.0 * math.pi
    return a


@njit(cache=True)
def predict_inplace(x, P, ax, ay, wz, dt, Q):
    th = x[4]
    c = math.cos(th)
    s = math.sin(th)
    # world-frame acceleration and its derivative w.r.t. heading
    wx = c * ax - s * ay
    wy = s * ax + c * ay
    jx = (-s * ax - c * ay) * dt
    jy = (c * ax - s * ay) * dt

    x[0] += x[2] * dt
    x[1] += x[3] * dt
    x[2] += wx * dt
    x[3] += wy * dt
    x[4] = wrap_angle(th + wz * dt)

    # P <- F P F^T with F = I + E, E sparse; rows 0,1 before 2,3
    for j in range(5):
        P[0, j] += dt * P[2, j]
        P[1, j] += dt * P[3, j]
        P[2, j] += jx * P[4, j]
        P[3, j] += jy * P[4, j]
    for i in range(5):
        P[i, 0] += dt * P[i, 2]
        P[i, 1] += dt * P[i, 3]
        P[i, 2] += jx * P[i, 4]
        P[i, 3] += jy * P[i, 4]
    for i in range(5):
        for j in range(5):
            P[i, j] += Q[i, j] * dt
    symmetrize(P)


@njit(cache=True)
def symmetrize(P):
    n = P.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            m = 0.5 * (P[i, j] + P[j, i])
            P[i, j] = m
            P[j, i] = m


@njit(cache=True)
def innovation_stats(x, P, zx, zy, rx, ry):
    """Return (ex, ey, s00, s01, s11, det, chi2) for a position measurement."""
    ex = zx - x[0]
    ey = zy - x[1]
    s00 = P[0, 0] + rx
    s01 = 0.5 * (P[0, 1] + P[1, 0])
    s11 = P[1, 1] + ry
    det = s00 * s11 - s01 * s01
    if not det > 1e-300:
        return ex, ey, s00, s01, s11, det, np.nan
    chi2 = (s11 * ex * ex - 2.0 * s01 * ex * ey + s00 * ey * ey) / det
    return ex, ey, s00, s01, s11, det, chi2


@njit(cache=True)
def update_inplace(x, P, zx, zy, rx, ry, threshold, weight, K_out):
    """Chi-squared gated position update.

    ``weight`` is 0 for DISCARD, otherwise the innovation scale applied to
    outliers. Returns ``(status, chi2)``; ``K_out`` (5x2) receives the gain.
    """
    ex, ey, s00, s01, s11, det, chi2 = innovation_stats(x, P, zx, zy, rx, ry)
    if not det > 1e-300 or not det >= 1e-14 * s00 * s11:
        return SINGULAR, chi2
    status = ACCEPTED
    if chi2 > threshold:
        if weight == 0.0:
            for i in range(5):
                K_out[i, 0] = 0.0
                K_out[i, 1] = 0.0
            return REJECTED, chi2
        ex *= weight
        ey *= weight
        status = PARTIAL
    i00 = s11 / det
    i01 = -s01 / det
    i11 = s00 / det
    for i in range(5):
        K_out[i, 0] = P[i, 0] * i00 + P[i, 1] * i01
        K_out[i, 1] = P[i, 0] * i01 + P[i, 1] * i11
    for i in range(5):
        x[i] += K_out[i, 0] * ex + K_out[i, 1] * ey
    x[4] = wrap_angle(x[4])
    # P <- P - K H P, H = [I2 | 0]
    r0 = P[0].copy()
    r1 = P[1].copy()
    for i in range(5):
        for j in range(5):
            P[i, j] -= K_out[i, 0] * r0[j] + K_out[i, 1] * r1[j]
    symmetrize(P)
    return status, chi2


@njit(cache=True)
def advance(kind, t, data, i0, i1, x, P, clock, Q, threshold, weight,
            out_px, out_py, out_trp, out_chi2, out_status):
    """Replay events ``[i0, i1)`` through the filter.

    ``clock[0]`` holds the filter timestamp and is advanced by IMU events.
    Per-event outputs are written at the event index. Returns the index of
    the first event whose update hit a singular innovation covariance, or -1.
    """
    K = np.empty((5, 2))
    for i in range(i0, i1):
        k = kind[i]
        out_chi2[i] = np.nan
        out_status[i] = -2
        if k == IMU:
            dt = t[i] - clock[0]
            if dt > 0.0:
                predict_inplace(x, P, data[i, 0], data[i, 1], data[i, 2], dt, Q)
                clock[0] = t[i]
        elif k == LIDAR or k == GPS:
            st, c2 = update_inplace(x, P, data[i, 0], data[i, 1], data[i, 2],
                                    data[i, 3], threshold, weight, K)
            if st == SINGULAR:
                return i
            out_chi2[i] = c2
            out_status[i] = st
        out_px[i] = x[0]
        out_py[i] = x[1]
        out_trp[i] = P[0, 0] + P[1, 1] + P[2, 2] + P[3, 3] + P[4, 4]
    return -1


@njit(cache=True)
def advance_quiet(kind, t, data, i0, i1, x, P, clock, Q, threshold, weight):
    """:func:`advance` without per-event outputs."""
    K = np.empty((5, 2))
    for i in range(i0, i1):
        k = kind[i]
        if k == IMU:
            dt = t[i] - clock[0]
            if dt > 0.0:
                predict_inplace(x, P, data[i, 0], data[i, 1], data[i, 2], dt, Q)
                clock[0] = t[i]
        elif k == LIDAR or k == GPS:
            st, _ = update_inplace(x, P, data[i, 0], data[i, 1], data[i, 2],
                                   data[i, 3], threshold, weight, K)
            if st == SINGULAR:
                return i
    return -1


@njit(cache=True)
def advance_closed_loop(kind, t, data, i0, i1, x, P, clock, Q, threshold, weight,
                        lane_x, lane_y, nx, ny, road_heading, speed, ctrl, plant,
                        out_phys):
    """Replay events with a steering controller closing the loop at truth events.

    ``ctrl`` holds (gain_lateral, gain_heading, steering_ratio, cycle_time,
    max_steering). ``plant`` holds the vehicle's lateral offset from the
    recorded path, the current road-wheel angle and the turn rate that the
    IMU reports until the next controller cycle; it is updated in place.
    LiDAR (and any authentic GPS) fixes follow the shifted physical pose.
    """
    K = np.empty((5, 2))
    for i in range(i0, i1):
        k = kind[i]
        if k == TRUTH:
            off = nx[i] * (x[0] - lane_x[i]) + ny[i] * (x[1] - lane_y[i])
            herr = wrap_angle(x[4] - road_heading[i])
            u = -ctrl[0] * off - ctrl[1] * herr
            u = min(max(u, -ctrl[4]), ctrl[4])
            wheel = u / ctrl[2]
            plant[0] += speed[i] * ctrl[3] * math.sin(wheel)
            plant[2] = (wheel - plant[1]) / ctrl[3]
            plant[1] = wheel
        elif k == IMU:
            dt = t[i] - clock[0]
            if dt > 0.0:
                w = plant[2]
                predict_inplace(x, P, data[i, 0], data[i, 1] + speed[i] * w,
                                data[i, 2] + w, dt, Q)
                clock[0] = t[i]
        elif k == LIDAR or k == GPS:
            zx = data[i, 0] + plant[0] * nx[i]
            zy = data[i, 1] + plant[0] * ny[i]
            st, _ = update_inplace(x, P, zx, zy, data[i, 2], data[i, 3],
                                   threshold, weight, K)
            if st == SINGULAR:
                return i
        out_phys[i] = plant[0]
    return -1


@njit(cache=True)
def advance_track(kind, t, data, i0, i1, x, P, clock, Q, threshold, weight,
                  base_px, base_py, nx, ny, sign, t0, goals, goal_times, stop):
    """:func:`advance_quiet` that also tracks deviation from the baseline.

    At every LiDAR/GPS event the side-signed lateral offset from the
    baseline is compared against ``goals``; the first crossing time (minus
    ``t0``) is written into ``goal_times`` where it is still NaN. Replay
    halts after the first event whose offset reaches ``stop``.
    Returns ``(bad_index, max_offset, next_index)``.
    """
    K = np.empty((5, 2))
    best = -np.inf
    for i in range(i0, i1):
        k = kind[i]
        if k == IMU:
            dt = t[i] - clock[0]
            if dt > 0.0:
                predict_inplace(x, P, data[i, 0], data[i, 1], data[i, 2], dt, Q)
                clock[0] = t[i]
        elif k == LIDAR or k == GPS:
            st, _ = update_inplace(x, P, data[i, 0], data[i, 1], data[i, 2],
                                   data[i, 3], threshold, weight, K)
            if st == SINGULAR:
                return i, best, i
            dev = sign * (nx[i] * (x[0] - base_px[i]) + ny[i] * (x[1] - base_py[i]))
            if dev > best:
                best = dev
            for j in range(goals.shape[0]):
                if np.isnan(goal_times[j]) and dev >= goals[j]:
                    goal_times[j] = t[i] - t0
            if dev >= stop:
                return -1, best, i + 1
    return -1, best, i1
