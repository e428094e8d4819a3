import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msfspoof import _kernels
from msfspoof import config as C
from msfspoof.analysis import fit_exponential, max_window_fit
from msfspoof.attack import (AUTHENTIC, AttackConfig, AttackOutcome, Mode, Side, SpoofErrorModel, apply_spoof_error,
                             closed_loop_attack, closed_loop_drive, dump_outcomes, exhaustive_window_search,
                             fusion_ripper, fusion_ripper_batch, load_outcomes, random_attack, run_baseline,
                             scheduled_attack)
from msfspoof.msf_core import Measurement, Source
from msfspoof.replay import Replay
from msfspoof.trace import Trace, generate_synthetic_trace, mirror_trace, strip_lidar


@pytest.fixture(scope="module")
def noise_free_replay(noise_free_trace, kf):
    return Replay(noise_free_trace, kf)


@pytest.fixture(scope="module")
def noisy_replay(noisy_trace, kf):
    return Replay(noisy_trace, kf)


# -- baseline --------------------------------------------------------------------

def test_baseline_tracks_noise_free_truth(noise_free_trace, kf):
    out = run_baseline(noise_free_trace, kf)
    times = np.array([t for t, _ in out])
    pos = np.array([s.position for _, s in out])
    truth, _ = noise_free_trace.truth_at(times)
    late = times >= 5.0
    assert np.max(np.hypot(*(pos[late] - truth[late]).T)) < 1e-3


def test_baseline_is_repeatable(noisy_trace, kf):
    a, b = run_baseline(noisy_trace, kf), run_baseline(noisy_trace, kf)
    assert len(a) == len(b) > 0
    for (ta, sa), (tb, sb) in zip(a, b):
        assert ta == tb
        assert np.array_equal(sa.vector, sb.vector) and np.array_equal(sa.covariance, sb.covariance)


def test_baseline_of_empty_trace(kf):
    assert run_baseline(Trace.empty(), kf) == []


def test_noisy_baseline_accuracy(noisy_replay):
    r = noisy_replay
    idx = np.flatnonzero(r.meas_mask)
    idx = idx[r.t[idx] >= 5.0]
    err = np.hypot(r.base_px[idx] - r.lane_x[idx], r.base_py[idx] - r.lane_y[idx])
    assert math.sqrt(np.mean(err ** 2)) < 0.05


# -- FusionRipper ------------------------------------------------------------------

def test_start_must_be_a_gps_epoch(noisy_replay):
    with pytest.raises(ValueError):
        fusion_ripper(noisy_replay, 10.5, AttackConfig(0.5, 1.1))


def test_attack_config_validation():
    for bad in (dict(d=0.0), dict(d=0.5, f=0.9), dict(d=0.5, trigger_threshold=0.0), dict(d=0.5, max_duration=0)):
        with pytest.raises(ValueError):
            AttackConfig(**bad)
    assert AttackConfig(0.5, side="right").side is Side.RIGHT


def test_small_spoof_on_confident_trace_never_triggers(noise_free_replay):
    o = fusion_ripper(noise_free_replay, 20.0, AttackConfig(0.1, 1.5, max_duration=60.0))
    assert o.stage2_time is None
    assert o.max_deviation < 0.295


def test_unconfident_period_gives_takeover(campaign_replay):
    o = fusion_ripper(campaign_replay, 12.0, AttackConfig(0.5, 1.1))
    assert o.stage2_time is not None
    assert o.fitted_base >= 1.3
    assert o.max_deviation >= 2.855


def test_unit_base_equals_stage_one_only(campaign_replay):
    a = fusion_ripper(campaign_replay, 70.0, AttackConfig(0.4, 1.0))
    b = fusion_ripper(campaign_replay, 70.0, AttackConfig(0.4, 1.0, mode=Mode.STAGE1_ONLY))
    np.testing.assert_array_equal(a.deviations, b.deviations)
    np.testing.assert_array_equal(a.deltas, b.deltas)
    assert a.max_deviation == b.max_deviation


def test_outcome_series_invariants(campaign_replay):
    o = fusion_ripper(campaign_replay, 70.0, AttackConfig(0.5, 1.2, side=Side.RIGHT))
    assert np.all(np.diff(o.times) > 0)
    assert o.max_deviation == pytest.approx(np.max(o.deviations))
    assert o.deviation_series[0] == (o.times[0], o.deviations[0])


def test_batch_matches_separate_runs(campaign_replay):
    fs = [1.1, 1.4, 2.0]
    batch = fusion_ripper_batch(campaign_replay, 70.0, 0.5, fs, side=Side.RIGHT, keep_series=True)
    for f, o in zip(fs, batch):
        single = fusion_ripper(campaign_replay, 70.0, AttackConfig(0.5, f, side=Side.RIGHT))
        np.testing.assert_array_equal(o.deviations, single.deviations)
        assert o.success == single.success and o.fitted_base == single.fitted_base


def test_compact_runs_agree_on_success(campaign_replay):
    full = fusion_ripper_batch(campaign_replay, 130.0, 0.5, [1.1, 1.5], side=Side.RIGHT, keep_series=True)
    compact = fusion_ripper_batch(campaign_replay, 130.0, 0.5, [1.1, 1.5], side=Side.RIGHT, stop_deviation=2.405)
    for a, b in zip(full, compact):
        assert a.success == pytest.approx(b.success)
        assert a.stage2_time == b.stage2_time


def test_stage_two_distances_strictly_increase(campaign_replay):
    o = fusion_ripper(campaign_replay, 12.0, AttackConfig(0.5, 1.2))
    k = int(round(o.stage2_time - o.start_time))
    assert np.all(o.deltas[:k] == 0.5)
    assert o.deltas[k] == 0.5
    assert np.all(np.diff(o.deltas[k:]) > 0)
    np.testing.assert_allclose(o.deltas[k:k + 5], 0.5 * 1.2 ** np.arange(5))


def test_null_attack_equals_baseline(noise_free_replay):
    # on a noise-free trace a zero-distance spoof is the real fix
    o = scheduled_attack(noise_free_replay, 30.0, [0.0] * 20, spoof_uncertainty=np.diag([0.01, 0.01]))
    assert np.max(np.abs(o.deviations)) == 0.0


def test_authentic_schedule_equals_baseline(noisy_replay):
    o = scheduled_attack(noisy_replay, 10.0, lambda k: AUTHENTIC, max_duration=30.0)
    assert np.max(np.abs(o.deviations)) == 0.0


def test_mirrored_trace_gives_mirrored_series(noisy_trace, kf):
    a = fusion_ripper(Replay(noisy_trace, kf), 10.0, AttackConfig(0.3, 1.5, max_duration=30.0))
    mirrored = mirror_trace(noisy_trace)
    b = fusion_ripper(Replay(mirrored, kf), 10.0, AttackConfig(0.3, 1.5, side=Side.RIGHT, max_duration=30.0))
    # deviations are counted toward the attacked side, so the mirror image is the same series
    np.testing.assert_allclose(a.deviations, b.deviations, atol=1e-6)


def test_rejected_spoof_leaves_state_unchanged(noisy_replay):
    r = noisy_replay
    e = r.epoch_of(15.0)
    o = scheduled_attack(r, 15.0, [50.0], max_duration=0.5)
    assert not o.accepted[0]
    filt = r.fork(e)
    assert o.gps_deviations[0] == r.deviation_at(int(r.gps_idx[e]), filt.x)


@settings(max_examples=15, deadline=None)
@given(d=st.floats(0.2, 1.0), f=st.floats(1.0, 2.0), start=st.integers(5, 170))
def test_goal_monotonicity(campaign_replay, d, f, start):
    o = fusion_ripper(campaign_replay, float(start), AttackConfig(d, f), keep_series=False)
    t1, t2 = o.success_time(0.895), o.success_time(2.405)
    if t2 is not None:
        assert t1 is not None and t1 <= t2


def test_outcome_round_trip(tmp_path, campaign_replay):
    outs = [fusion_ripper(campaign_replay, 12.0, AttackConfig(0.5, 1.1)),
            fusion_ripper(campaign_replay, 100.0, AttackConfig(0.4, 1.3), keep_series=False)]
    for name in ("o.jsonl", "o.jsonl.gz"):
        dump_outcomes(outs, tmp_path / name)
        back = load_outcomes(tmp_path / name)
        for a, b in zip(outs, back):
            assert a.to_record() == b.to_record()


# -- exhaustive search --------------------------------------------------------------

def test_forced_zero_spoof_is_null(noisy_replay):
    devs, deltas = exhaustive_window_search(noisy_replay, 20.0, 10, forced_deltas=[0.0] * 10,
                                            spoof_uncertainty=np.diag([0.01, 0.01]))
    assert np.all(deltas == 0.0)
    assert np.max(devs) < 0.2


def test_search_window_must_fit(noisy_replay):
    with pytest.raises(ValueError):
        exhaustive_window_search(noisy_replay, 55.0, 10)


def test_search_on_noise_free_trace_stays_small(noise_free_replay):
    devs, _ = exhaustive_window_search(noise_free_replay, 100.0, 10)
    assert devs.max() < 0.295
    assert fit_exponential(devs).a < 1.1


def test_gps_only_search_grows(noise_free_trace, kf):
    r = Replay(strip_lidar(noise_free_trace), kf)
    devs, deltas = exhaustive_window_search(r, 100.0, 10)
    assert fit_exponential(devs).a > 1.3
    assert devs.max() >= 3.0
    # distances grow until the candidate range runs out
    grown = np.abs(deltas)[: np.argmax(np.abs(deltas)) + 1]
    assert np.all(np.diff(grown) > 0)


def test_window_log_shape(campaign_replay):
    devs, deltas, log = exhaustive_window_search(campaign_replay, 15.0, 10, return_log=True,
                                                 candidates=np.arange(0, 5.01, 0.5))
    assert len(log) == len(devs) == len(deltas) == 10
    assert np.all(log.r_lidar > 0.1)  # inside the inflated period


# -- random baseline -------------------------------------------------------------

def test_zero_range_random_attack_is_null(noise_free_replay):
    o = random_attack(noise_free_replay, 30.0, 0.0, seed=1, max_duration=20.0,
                      spoof_uncertainty=np.diag([0.01, 0.01]))
    assert np.max(np.abs(o.deviations)) == 0.0


def test_random_attack_is_seeded(campaign_replay):
    a = random_attack(campaign_replay, 40.0, 10.0, seed=3)
    b = random_attack(campaign_replay, 40.0, 10.0, seed=3)
    c = random_attack(campaign_replay, 40.0, 10.0, seed=4)
    np.testing.assert_array_equal(a.deltas, b.deltas)
    np.testing.assert_array_equal(a.deviations, b.deviations)
    assert not np.array_equal(a.deltas, c.deltas)
    assert np.all((a.deltas >= 0) & (a.deltas <= 10))


def test_random_range_validated(campaign_replay):
    with pytest.raises(ValueError):
        random_attack(campaign_replay, 40.0, -1.0, seed=0)


# -- spoofing inaccuracy ----------------------------------------------------------

def _spoofed(var=0.01):
    return Measurement(Source.GPS_SPOOFED, (3.0, 4.0), np.diag([var, var]), 1.0)


def test_zero_error_model_is_identity():
    rng = np.random.Generator(np.random.PCG64(0))
    m = apply_spoof_error(_spoofed(), SpoofErrorModel(0.0, 0.0), rng)
    np.testing.assert_array_equal(m.position, [3.0, 4.0])
    np.testing.assert_array_equal(m.uncertainty, np.diag([0.01, 0.01]))


@pytest.mark.parametrize("mult", [1.0, 2.0, 3.0])
def test_position_error_spread(mult):
    rng = np.random.Generator(np.random.PCG64(42))
    model = SpoofErrorModel(multiplier=mult)
    offs = np.array([apply_spoof_error(_spoofed(), model, rng).position - [3.0, 4.0] for _ in range(100000)])
    rms = math.sqrt(np.mean(np.sum(offs ** 2, axis=1)))
    assert rms == pytest.approx(mult * 0.058, rel=0.02)
    # uniform direction: both axes share the spread
    assert np.std(offs[:, 0]) == pytest.approx(np.std(offs[:, 1]), rel=0.03)


def test_variance_stays_positive():
    rng = np.random.Generator(np.random.PCG64(1))
    model = SpoofErrorModel(var_sigma=10.0)
    for _ in range(2000):
        assert np.all(np.diag(apply_spoof_error(_spoofed(1e-6), model, rng).uncertainty) > 0)


def test_error_model_needs_spoofed_source():
    rng = np.random.Generator(np.random.PCG64(1))
    with pytest.raises(ValueError):
        apply_spoof_error(Measurement(Source.GPS, (0, 0), np.eye(2)), SpoofErrorModel(), rng)


def test_spoof_error_runs_are_seeded(campaign_replay):
    kw = dict(side=Side.LEFT, spoof_error=SpoofErrorModel(seed=2), keep_series=True)
    a = fusion_ripper_batch(campaign_replay, 12.0, 0.5, [1.1], seed=5, **kw)[0]
    b = fusion_ripper_batch(campaign_replay, 12.0, 0.5, [1.1], seed=5, **kw)[0]
    c = fusion_ripper_batch(campaign_replay, 12.0, 0.5, [1.1], seed=6, **kw)[0]
    np.testing.assert_array_equal(a.deviations, b.deviations)
    assert not np.array_equal(a.deviations, c.deviations)


# -- closed loop --------------------------------------------------------------------

def test_no_attack_closed_loop_stays_centred(noisy_trace, kf):
    times, phys = closed_loop_drive(noisy_trace, 5.0, C.controller_config(), 40.0, kf)
    assert np.max(np.abs(phys)) < 0.05


def test_physical_drift_opposes_estimate(campaign_trace, kf):
    # spoof to the right: the estimate moves right, the controller steers the car left
    times, phys = closed_loop_drive(campaign_trace, 15.0, C.controller_config(), 20.0, kf,
                                    deltas=[0.3] * 10, side=Side.RIGHT)
    assert phys[np.argmax(np.abs(phys))] > 0.2


def test_closed_loop_attack_reports_physical_series(campaign_replay):
    ctrl = C.controller_config()
    o, (t, phys) = closed_loop_attack(campaign_replay, 12.0, AttackConfig(0.5, 1.1), ctrl)
    assert o.success_time(0.895) is not None
    # attacked to the left, the car ends up on the right (negative, left-positive frame)
    assert phys.min() <= -0.895
    np.testing.assert_allclose(-phys, o.deviations)
