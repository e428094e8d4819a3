import gzip
import json

import numpy as np
import pytest

from msfspoof import config as C
from msfspoof.replay import Replay
from msfspoof.trace import (GPS, IMU, LIDAR, TRUTH, GpsFix, NoiseModel, Trace, TraceEvent, TraceFormatError,
                            TraceValidationError, UnconfidentPeriod, from_records, generate_synthetic_trace,
                            inject_unconfident_periods, median_gps_uncertainty, read_trace, strip_lidar,
                            write_trace)


def test_noise_free_fixes_sit_on_truth():
    tr = generate_synthetic_trace(10.0, C.scenario(), NoiseModel())
    for kind in (GPS, LIDAR):
        idx = tr.indices(kind)
        truth, _ = tr.truth_at(tr.t[idx])
        np.testing.assert_allclose(tr.data[idx, 0:2], truth, atol=1e-9)


def test_event_counts_follow_sensor_rates():
    tr = generate_synthetic_trace(10.0, C.scenario(), C.noise_model())
    assert tr.count(GPS) == 10
    assert tr.count(LIDAR) == 50
    assert tr.count(IMU) == 2000
    assert tr.count(TRUTH) == 1001


def test_same_seed_same_trace():
    a = generate_synthetic_trace(5.0, C.scenario(), C.noise_model())
    b = generate_synthetic_trace(5.0, C.scenario(), C.noise_model())
    assert a == b
    c = generate_synthetic_trace(5.0, C.scenario(), C.noise_model(seed=99))
    assert a != c


def test_events_sorted_after_every_operation(campaign_trace):
    for tr in (campaign_trace, strip_lidar(campaign_trace)):
        assert np.all(np.diff(tr.t) >= 0)


def test_identity_injection():
    tr = generate_synthetic_trace(20.0, C.scenario(), C.noise_model())
    assert inject_unconfident_periods(tr, [UnconfidentPeriod(5.0, 10.0, 1.0, 0.0)], seed=3) == tr


def test_injection_scales_variance_exactly():
    noise = C.noise_model()
    tr = generate_synthetic_trace(100.0, C.scenario(), noise)
    out = inject_unconfident_periods(tr, [UnconfidentPeriod(60.0, 70.0, 100.0, 0.3)], seed=3)
    lid = out.indices(LIDAR)
    inside = lid[(out.t[lid] >= 60.0) & (out.t[lid] <= 70.0)]
    outside = np.setdiff1d(lid, inside)
    assert len(inside) == 51
    np.testing.assert_array_equal(out.data[inside, 2:4], 100.0 * noise.lidar_var_nominal)
    np.testing.assert_array_equal(out.data[outside], tr.data[outside])
    assert out.count(LIDAR) == tr.count(LIDAR)
    np.testing.assert_array_equal(out.kind, tr.kind)
    other = out.kind != LIDAR
    np.testing.assert_array_equal(out.data[other], tr.data[other])


def test_injected_period_raises_filter_covariance(kf):
    tr = generate_synthetic_trace(100.0, C.scenario(), C.noise_model())
    out = inject_unconfident_periods(tr, [UnconfidentPeriod(40.0, 60.0, 100.0, 0.3)], seed=1)
    r = Replay(out, kf)
    f = r.initial_filter()
    traces, times = [], []
    meas = np.flatnonzero(r.meas_mask)
    prev = 0
    for i in meas:
        r.advance_quiet(f, prev, i + 1)
        prev = i + 1
        traces.append(np.trace(f.P))
        times.append(r.t[i])
    traces, times = np.array(traces), np.array(times)
    inside = (times > 41.0) & (times <= 60.0)
    outside = (times > 5.0) & ((times < 40.0) | (times > 65.0))
    assert traces[inside].mean() > traces[outside].mean()


def test_overlapping_periods_rejected():
    tr = generate_synthetic_trace(30.0, C.scenario(), NoiseModel())
    with pytest.raises(TraceValidationError):
        inject_unconfident_periods(tr, [UnconfidentPeriod(5, 10), UnconfidentPeriod(8, 12)])
    with pytest.raises(TraceValidationError):
        inject_unconfident_periods(tr, [UnconfidentPeriod(25, 40)])
    with pytest.raises(ValueError):
        UnconfidentPeriod(10, 5)
    with pytest.raises(ValueError):
        UnconfidentPeriod(1, 5, lidar_var_scale=0.5)


@pytest.mark.parametrize("suffix", [".jsonl", ".jsonl.gz"])
def test_round_trip(tmp_path, suffix):
    tr = generate_synthetic_trace(10.0, C.scenario(), C.noise_model())
    p = tmp_path / f"t{suffix}"
    write_trace(tr, p)
    back = read_trace(p)
    assert back == tr
    assert list(back)[:50] == list(tr)[:50]


def test_unknown_kind_names_the_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"t":0.0,"kind":"gps","position":[0,0],"variance":[1,1]}\n'
                 '{"t":0.1,"kind":"radar","position":[0,0]}\n')
    with pytest.raises(TraceFormatError, match="line 2"):
        read_trace(p)


def test_malformed_json_names_the_line(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"t":0.0,"kind":"gps","position":[0,0],"variance":[1,1]}\nnot json\n')
    with pytest.raises(TraceFormatError, match="line 2"):
        read_trace(p)


def test_non_monotone_timestamps_rejected(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"t":1.0,"kind":"gps","position":[0,0],"variance":[1,1]}\n'
                 '{"t":0.5,"kind":"gps","position":[0,0],"variance":[1,1]}\n')
    with pytest.raises(TraceValidationError):
        read_trace(p)
    with pytest.raises(TraceValidationError):
        Trace([GPS, GPS], [1.0, 0.5], np.zeros((2, 5)))


def test_empty_file_gives_empty_trace(tmp_path):
    p = tmp_path / "empty.jsonl"
    p.write_text("")
    assert len(read_trace(p)) == 0


def test_median_gps_uncertainty():
    rows = [{"t": float(k), "kind": "gps", "position": [0, 0], "variance": [v, v]} for k, v in enumerate([1, 2, 100])]
    tr = from_records(rows)
    np.testing.assert_array_equal(median_gps_uncertainty(tr), np.diag([2.0, 2.0]))
    same = from_records([{"t": 0.0, "kind": "gps", "position": [0, 0], "variance": [0.7, 0.7]}] * 3)
    np.testing.assert_array_equal(median_gps_uncertainty(same), np.diag([0.7, 0.7]))
    shuffled = from_records(rows[::-1])
    np.testing.assert_array_equal(median_gps_uncertainty(shuffled), median_gps_uncertainty(tr))


def test_median_needs_gps():
    tr = generate_synthetic_trace(3.0, C.scenario(), NoiseModel())
    with pytest.raises(ValueError):
        median_gps_uncertainty(tr.select(tr.kind != GPS))


def test_events_from_payloads():
    tr = Trace.from_events([TraceEvent(1.0, GpsFix((1.0, 2.0), (0.1, 0.2))),
                            TraceEvent(0.5, GpsFix((0.0, 0.0), (0.1, 0.1)))])
    assert list(tr.t) == [0.5, 1.0]
    assert tr.event(1).payload == GpsFix((1.0, 2.0), (0.1, 0.2))


def test_noise_free_pipeline_tracks_truth(noise_free_trace, kf):
    r = Replay(noise_free_trace, kf)
    meas = np.flatnonzero(r.meas_mask)
    late = meas[r.t[meas] >= 5.0]
    err = np.hypot(r.base_px[late] - r.lane_x[late], r.base_py[late] - r.lane_y[late])
    assert err.max() < 1e-3
