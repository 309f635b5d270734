"""Property-based checks of invariants."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quadguard import _kernels as K
from quadguard.config import default_config
from quadguard.control import Mixer
from quadguard.detection import DetectorState, RocResult, cusum_step, window_decision
from quadguard.dynamics import net_wrench
from quadguard.quaternion import integrate, normalize, to_rotation_matrix, wrap_angle

residuals = arrays(np.float64, st.integers(1, 400),
                   elements=st.floats(0, 50, allow_nan=False, allow_infinity=False))
PARAMS = default_config().vehicle


@given(residuals, st.floats(0, 10), st.floats(0.1, 100))
def test_cusum_statistic_bounded(r, b, lam):
    s = DetectorState(10)
    for v in r:
        s, _ = cusum_step(s, float(v), b, lam)
        assert 0.0 <= s.S <= lam


@given(residuals, st.floats(0, 5), st.floats(0.01, 50), st.floats(0.01, 50))
def test_alarm_count_monotone_in_threshold(r, b, l1, l2):
    lo, hi = min(l1, l2), max(l1, l2)
    a_lo, _ = K.detect_stream(r, b, lo, 10, 0.05, True)
    a_hi, _ = K.detect_stream(r, b, hi, 10, 0.05, True)
    assert a_hi.sum() <= a_lo.sum()


@given(st.lists(st.integers(0, 1), min_size=1, max_size=600), st.integers(1, 250))
def test_window_rate_is_local(bits, window):
    s = DetectorState(window)
    for k, a in enumerate(bits):
        s, flag = window_decision(s, a, 0.005)
        recent = bits[max(0, k - window + 1): k + 1]
        assert s.count == sum(recent)
        assert math.isclose(s.DR, sum(recent) / window)
        assert flag == (sum(recent) / window > 0.005)


@given(residuals, st.floats(0, 5), st.floats(0.01, 50))
def test_stream_matches_stepwise(r, b, lam):
    alpha, flags = K.detect_stream(r, b, lam, 20, 0.05, True)
    s = DetectorState(20)
    for k, v in enumerate(r):
        s, a = cusum_step(s, float(v), b, lam)
        s, f = window_decision(s, a, 0.05)
        assert a == alpha[k] and f == bool(flags[k])


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1)),
       arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1)))
def test_auc_in_unit_interval(f, t):
    n = min(f.size, t.size)
    res = RocResult(np.zeros(n), f[:n], t[:n], np.zeros(n), np.zeros(n))
    assert -1e-12 <= res.auc() <= 1 + 1e-12
    j = res.operating_point(0.5)
    assert 0 <= j < n


@settings(max_examples=50)
@given(arrays(np.float64, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 0.1),
       arrays(np.float64, (200, 3), elements=st.floats(-10, 10)))
def test_integrate_preserves_unit_norm(q, rates):
    q = normalize(q)
    for w in rates:
        q = integrate(q, w, 0.004)
        assert abs(np.linalg.norm(q) - 1.0) < 1e-12
    R = to_rotation_matrix(q)
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)


@given(st.floats(-1e6, 1e6))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(a), abs_tol=1e-6)


@given(st.floats(0.7, 1.3), arrays(np.float64, 3, elements=st.floats(-0.2, 0.2)))
def test_mixer_round_trip_when_unsaturated(k, tau):
    p = PARAMS
    tau = tau * np.array([1.0, 1.0, 0.1])
    out = Mixer(p)(tau, k * p.mass * p.gravity)
    if not out.saturated:
        bw = net_wrench(out.speeds, p, model="near_hover")
        assert abs(-bw.force[2] - k * p.mass * p.gravity) < 1e-9
        assert np.allclose(bw.torque, tau, atol=1e-9)
    assert np.all(out.speeds >= p.omega_min - 1e-9) and np.all(out.speeds <= p.omega_max + 1e-9)
