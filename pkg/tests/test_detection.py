import math

import numpy as np
import pytest

from quadguard import _kernels as K
from quadguard.detection import (Dataset, DetectorState, SlidingWindowDetector,
                                 calibrate_drift, calibrate_threshold, chi2_step, cusum_step,
                                 load_datasets, point_alarm_rate, predicted_imu, read_dataset,
                                 reduce_residual, residual, residual_vector, roc_eval, standard_cusum_step,
                                 window_decision, write_dataset, write_roc)
from quadguard.errors import InvalidInputError, NumericalError
from quadguard.sensors import SensorFrame


def run_cusum(r, b, lam, window=200):
    st = DetectorState(window)
    S, A = [], []
    for v in r:
        st, a = cusum_step(st, v, b, lam)
        S.append(st.S)
        A.append(a)
    return S, A


def test_golden_trace():
    # S_k = max(0, S_{k-1} + r_{k-1} - b); reset to 0 on alarm
    S, A = run_cusum([0, 0, 5, 5, 5, 0, 0, 0], b=1.0, lam=10.0)
    assert S == [0.0, 0.0, 0.0, 4.0, 8.0, 0.0, 0.0, 0.0]
    assert A == [0, 0, 0, 0, 0, 1, 0, 0]


def test_golden_trace_stream_kernels_agree():
    r = np.array([0, 0, 5, 5, 5, 0, 0, 0], float)
    for backend in filter(None, (K.python_backend, K.compiled_backend)):
        alpha, _ = backend.detect_stream(r, 1.0, 10.0, 200, 0.005, True)
        assert alpha.tolist() == [0, 0, 0, 0, 0, 1, 0, 0]


def test_zero_residual_never_alarms():
    S, A = run_cusum([0.0] * 1000, b=0.5, lam=1.0)
    assert max(S) == 0.0 and sum(A) == 0


@pytest.mark.parametrize("c,lam", [(3.0, 10.0), (0.7, 5.0), (2.0, 9.5)])
def test_first_alarm_closed_form(c, lam):
    b = 1.0
    _, A = run_cusum([b + c] * 100, b, lam)
    # the first sample is only consumed on the next step (lag), so counting
    # that first feed as step 1 the alarm lands on step ceil(lam / c) + 1
    assert A.index(1) + 1 == math.ceil(lam / c) + 1


def test_first_alarm_integer_ratio_is_strict():
    # S must exceed lam: S = 9 after three consuming steps is not an alarm
    _, A = run_cusum([4.0] * 10, 1.0, 9.0)
    assert A.index(1) == 4


def test_window_threshold_arithmetic():
    st = DetectorState(200)
    st, flag = window_decision(st, 1, 0.005)
    assert st.DR == 0.005 and not flag
    st, flag = window_decision(st, 1, 0.005)
    assert st.DR == 0.01 and flag


def test_window_all_zero():
    st = DetectorState(200)
    for _ in range(500):
        st, flag = window_decision(st, 0, 0.005)
        assert not flag


def test_window_periodic_alarms():
    st = DetectorState(200)
    for k in range(1000):
        st, flag = window_decision(st, int(k % 50 == 0), 0.005)
    assert st.DR == 0.02 and flag


def test_window_forgets_old_alarms():
    st = DetectorState(10)
    st, _ = window_decision(st, 1, 0.05)
    for _ in range(10):
        st, _ = window_decision(st, 0, 0.05)
    assert st.count == 0 and st.window_bits().sum() == 0


def test_steps_are_pure():
    st = DetectorState(5)
    st2, _ = cusum_step(st, 3.0, 1.0, 10.0)
    st3, _ = window_decision(st2, 1, 0.1)
    assert st.r_prev is None and st2.count == 0 and st3.count == 1


def test_chi2_examples():
    a, d = chi2_step(np.zeros(3), np.eye(3), 7.8)
    assert a == 0 and d == 0.0
    a, d = chi2_step(np.array([3.0, 0, 0]), np.eye(3), 7.8)
    assert a == 1 and d == 9.0
    with pytest.raises(NumericalError):
        chi2_step(np.ones(2), np.zeros((2, 2)), 1.0)


def test_standard_cusum_is_same_recursion():
    st = DetectorState(10)
    a_ref = DetectorState(10)
    for d in [0, 5, 9, 2, 30, 1]:
        st, x = standard_cusum_step(st, d, 3.0, 8.0)
        a_ref, y = cusum_step(a_ref, d, 3.0, 8.0)
        assert x == y and st.S == a_ref.S


def test_clearance_hysteresis():
    det = SlidingWindowDetector(0.0, 0.5, 4, 0.0, "threshold", clearance_samples=3)
    flags = [det.step(v)[2] for v in [1, 0, 0, 0, 0, 0, 0, 0, 0]]
    # raw window flag stays true for 4 samples; the third quiet one clears
    assert flags == [True] * 6 + [False] * 3


def hover_x():
    return np.array([0, 0, -5.0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0])


def frame_from(accel, gyro, fresh=True):
    return SensorFrame(0.0, np.asarray(accel, float), np.asarray(gyro, float), 0.0,
                       np.zeros(3), np.zeros(3), np.zeros(4), {"imu": fresh})


def test_residual_zero_for_predicted_measurements(params, cfg):
    x = hover_x()
    x[3:6] = [0.4, -0.2, 0.1]
    x[10:13] = [0.01, 0.02, -0.03]
    u = np.array([0.1, 0.0, -14.5, 0, 0, 0])
    acc, gyr = predicted_imu(x, u, params)
    assert residual(frame_from(acc, gyr), x, u, params, cfg.sensors) == 0.0


def test_residual_emi_is_huge(params, cfg):
    u = np.array([0, 0, -params.mass * params.gravity, 0, 0, 0])
    r = residual(frame_from([300] * 3, [70] * 3), hover_x(), u, params, cfg.sensors)
    assert r > 100


def test_residual_stale_imu_is_none(params, cfg):
    assert residual(frame_from([0] * 3, [0] * 3, fresh=False), hover_x(), np.zeros(6),
                    params, cfg.sensors) is None


def test_reduce_residual_scaling(cfg):
    raw = np.array([0.05, 0, 0, 0, 0.005, 0])
    assert math.isclose(reduce_residual(raw, cfg.sensors, "norm"), math.sqrt(2))
    assert math.isclose(reduce_residual(raw, cfg.sensors, "max"), 1.0)
    extra = np.array([0.05**2 * 3, 0, 0, 0, 0, 0])
    assert math.isclose(reduce_residual(raw, cfg.sensors, "max", extra), 1.0)
    assert math.isclose(reduce_residual(raw, cfg.sensors, "norm", extra), math.sqrt(1.25))
    with pytest.raises(InvalidInputError):
        reduce_residual(raw, cfg.sensors, "mean")


def test_residual_clean_hover_zero_noise_small(cfg):
    from quadguard.config import default_config
    from quadguard.harness import Simulator
    from quadguard.harness.simulate import S_IMU, S_RSE, S_UHAT
    for name in ("accel_std", "gyro_std", "gps_pos_std", "gps_vel_std", "compass_std", "tach_std"):
        setattr(cfg.sensors, name, 0.0)
    cfg.scenario.duration = 10.0
    log = Simulator(cfg, 0).run().result().log
    # normalise by the default sensor stds; the simulated sensors are noiseless
    sensors = default_config().sensors
    rows = log[log[:, 0] > 5.0]
    r = [reduce_residual(residual_vector(row[S_IMU][:3], row[S_IMU][3:], row[S_RSE],
                                         row[S_UHAT], cfg.vehicle), sensors)
         for row in rows]
    assert max(r) < 0.1


def _stream(n_clean, n_att, level, rng, clean=1.0):
    r = np.concatenate([rng.normal(clean, 0.3, n_clean), rng.normal(level, 0.3, n_att)])
    lab = np.r_[np.zeros(n_clean, int), np.ones(n_att, int)]
    t = np.arange(r.size) * 0.004
    return Dataset("x", t, np.abs(r), lab)


def test_roc_extremes(cfg, rng):
    cfg.detector.bench_window = 1
    ds = [_stream(500, 500, 8.0, rng) for _ in range(3)]
    res = roc_eval(ds, "chi2", cfg.detector, thresholds=[1e9, -1.0])
    assert (res.fpr[0], res.tpr[0]) == (0.0, 0.0)
    assert (res.fpr[1], res.tpr[1]) == (1.0, 1.0)
    assert math.isnan(res.response_times[0]) and res.response_times[1] == 0.0


def test_roc_separable_stream(cfg, rng):
    ds = [_stream(2000, 1000, 8.0, rng) for _ in range(3)]
    res = roc_eval(ds, "mars", cfg.detector)
    assert res.auc() > 0.99
    assert res.tpr_at(0.01) > 0.98
    assert 0 <= res.response_time_at(0.01) < 0.1


def test_auc_staircase():
    from quadguard.detection import RocResult
    r = RocResult(np.zeros(2), np.array([0.0, 0.5]), np.array([0.5, 1.0]), np.zeros(2), np.zeros(2))
    # points (0,0),(0,.5),(.5,1),(1,1): area .5*.75 + .5*1
    assert math.isclose(r.auc(), 0.875)
    assert r.operating_point(0.01) == 0


def test_dataset_round_trip(tmp_path, rng):
    t = np.arange(10) * 0.004
    r = rng.normal(size=10)
    r[3] = np.nan
    lab = np.r_[np.zeros(5, int), np.ones(5, int)]
    write_dataset(tmp_path / "a.csv", t, r, lab)
    d = read_dataset(tmp_path / "a.csv")
    assert np.allclose(d.t, t) and np.array_equal(d.label, lab)
    assert np.array_equal(np.isnan(d.r), np.isnan(r))
    assert np.allclose(d.r[~np.isnan(r)], r[~np.isnan(r)], rtol=0, atol=0)
    assert math.isclose(d.attack_start, t[5])
    assert len(load_datasets(tmp_path)) == 1


def test_dataset_errors(tmp_path):
    with pytest.raises(InvalidInputError):
        load_datasets(tmp_path)
    p = tmp_path / "bad.csv"
    p.write_text("t,r\n0,1\n")
    with pytest.raises(InvalidInputError, match="label"):
        read_dataset(p)
    p.write_text("t,r,label\n0,1,\n0.004,1,0\n")
    with pytest.raises(InvalidInputError, match="unlabeled"):
        read_dataset(p)


def test_write_roc(tmp_path, cfg, rng):
    res = roc_eval([_stream(300, 300, 6.0, rng)], "chi2", cfg.detector)
    write_roc(tmp_path / "roc.csv", res, "chi2")
    lines = (tmp_path / "roc.csv").read_text().splitlines()
    assert lines[0] == "detector,threshold,fpr,tpr,response_time"
    assert len(lines) == res.thresholds.size + 1


def test_calibration(rng):
    streams = [np.abs(rng.normal(1.0, 0.5, 20_000)) for _ in range(3)]
    b = calibrate_drift(streams)
    vals = np.concatenate(streams)
    assert math.isclose(b, vals.mean() + 2 * vals.std())
    lam = calibrate_threshold(streams, b, 1e-3)
    assert point_alarm_rate(streams, b, lam) <= 1e-3
    assert point_alarm_rate(streams, b, lam * 0.99) > 1e-3


def test_unknown_detector(cfg):
    with pytest.raises(InvalidInputError):
        roc_eval([Dataset("x", np.zeros(2), np.zeros(2), np.zeros(2, int))], "svm", cfg.detector)
