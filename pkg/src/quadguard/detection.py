"""Attack detection.

The MARS detector runs a lagged CUSUM on the IMU-vs-resilient-estimate
residual, groups point alarms in a sliding window and raises the system
flag when the window's alarm rate exceeds ``p``. Two benchmarks feed the
Mahalanobis distance of the standard filter's innovations into either a
plain threshold (chi-square test) or the same CUSUM; both share the window
logic. Offline ROC evaluation works on CSV residual streams.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .config import DetectorConfig, SensorConfig, VehicleParams
from .dynamics import drag_force
from .errors import InvalidInputError, NumericalError
from .quaternion import to_rotation_matrix

# ---------------------------------------------------------------- residual


def predicted_imu(x, wrench, params: VehicleParams):
    """IMU readings implied by a belief ``x`` and an estimated wrench."""
    R = to_rotation_matrix(x[6:10])
    accel = (wrench[0:3] + R.T @ drag_force(x[3:6], params)) / params.mass
    return accel, x[10:13].copy()


def residual_vector(accel, gyro, x, wrench, params: VehicleParams) -> np.ndarray:
    """Raw 6-axis residual ``[accel - accel_hat, gyro - gyro_hat]``."""
    pa, pg = predicted_imu(x, wrench, params)
    return np.concatenate([np.asarray(accel) - pa, np.asarray(gyro) - pg])


def belief_variance(P, params: VehicleParams) -> np.ndarray:
    """Diagonal variance of the predicted IMU readings due to belief uncertainty.

    Gyro axes take the rate variances directly; accel axes take the drag
    term's sensitivity to velocity (near-level approximation).
    """
    d = np.diag(P)
    kd = np.asarray(params.kd, float) / params.mass
    return np.concatenate([kd * kd * d[3:6], d[10:13]])


def reduce_residual(raw, sensors: SensorConfig, reduction: str = "norm",
                    extra_var=None) -> float:
    """Normalised scalar residual (Euclidean norm or max-abs).

    Each axis is divided by its sensor std, or, when ``extra_var`` is given,
    by ``sqrt(sensor_var + extra_var)``.
    """
    var = np.array([sensors.accel_std ** 2] * 3 + [sensors.gyro_std ** 2] * 3)
    if extra_var is not None:
        var = var + np.asarray(extra_var, float)
    scale = np.sqrt(var)
    z = np.asarray(raw) / np.where(scale > 0, scale, 1.0)
    if reduction == "norm":
        return float(math.sqrt(float(z @ z)))
    if reduction == "max":
        return float(np.max(np.abs(z)))
    raise InvalidInputError(f"unknown reduction {reduction!r}")


def residual(frame, x, wrench, params: VehicleParams, sensors: SensorConfig,
             reduction: str = "norm", P=None):
    """Scalar residual of a frame against the resilient belief.

    With ``P`` given the axes are scaled by the total predicted std (sensor
    noise plus belief uncertainty). Returns ``None`` when the frame carries
    no fresh IMU sample.
    """
    if not frame.fresh.get("imu", True):
        return None
    raw = residual_vector(frame.accel, frame.gyro, x, wrench, params)
    extra = None if P is None else belief_variance(P, params)
    return reduce_residual(raw, sensors, reduction, extra)


# ---------------------------------------------------------------- online detector


@dataclass
class DetectorState:
    """CUSUM statistic, alarm window and system flag of one detector."""

    window: int
    S: float = 0.0
    r_prev: float | None = None
    bits: np.ndarray = field(default=None)
    pos: int = 0
    seen: int = 0
    count: int = 0
    DR: float = 0.0
    alpha_s: bool = False

    def __post_init__(self):
        if self.bits is None:
            self.bits = np.zeros(self.window, dtype=np.int8)

    def copy(self) -> "DetectorState":
        return DetectorState(self.window, self.S, self.r_prev, self.bits.copy(), self.pos,
                             self.seen, self.count, self.DR, self.alpha_s)

    def window_bits(self) -> np.ndarray:
        """Bits currently in the window, oldest first (at most ``window``)."""
        n = min(self.seen, self.window)
        idx = (self.pos - n + np.arange(n)) % self.window
        return self.bits[idx]


def cusum_step(state: DetectorState, r: float, b: float, lam: float):
    """Lagged CUSUM update: ``S_k = max(0, S_{k-1} + r_{k-1} - b)``.

    Returns a new state and the point-alarm bit. ``S`` resets to zero on an
    alarm and ``r`` is stored for the next step.
    """
    st = state.copy()
    a = _cusum_inplace(st, r, b, lam)
    return st, a


def _cusum_inplace(st: DetectorState, r: float, b: float, lam: float) -> int:
    if st.r_prev is not None:
        st.S = max(0.0, st.S + st.r_prev - b)
    st.r_prev = r
    if st.S > lam:
        st.S = 0.0
        return 1
    return 0


def window_decision(state: DetectorState, alpha: int, p: float):
    """Push ``alpha`` into the window; system flag is ``DR > p``."""
    st = state.copy()
    flag = _window_inplace(st, alpha, p)
    return st, flag


def _window_inplace(st: DetectorState, alpha: int, p: float) -> bool:
    st.count += int(alpha) - int(st.bits[st.pos])
    st.bits[st.pos] = alpha
    st.pos = (st.pos + 1) % st.window
    st.seen += 1
    st.DR = st.count / st.window
    st.alpha_s = st.DR > p
    return st.alpha_s


def chi2_step(innovation, S, threshold: float):
    """Chi-square test on the Mahalanobis distance. Returns ``(alpha, d)``."""
    s = np.asarray(innovation, float)
    try:
        d = float(s @ np.linalg.solve(np.asarray(S, float), s))
    except np.linalg.LinAlgError:
        raise NumericalError("singular innovation covariance") from None
    return int(d > threshold), d


def standard_cusum_step(state: DetectorState, d: float, b: float, lam: float):
    """CUSUM benchmark on the Mahalanobis distance (same recursion as MARS)."""
    return cusum_step(state, d, b, lam)


class SlidingWindowDetector:
    """Online detector: point alarms -> window rate -> flag with clearance.

    Parameters
    ----------
    mode : {"cusum", "threshold"}
    clearance_samples : int
        The hysteresis flag clears only after the raw window decision has
        been false for this many consecutive samples.
    """

    def __init__(self, b: float, lam: float, window: int, p: float, mode: str = "cusum",
                 clearance_samples: int = 0):
        self.b, self.lam, self.p, self.mode = b, lam, p, mode
        self.clearance_samples = clearance_samples
        self.state = DetectorState(window)
        self.flag = False
        self._quiet = 0
        self.last_alpha = 0

    def step(self, r: float):
        """Feed one sample. Returns ``(alpha, alpha_s_raw, flag)``."""
        st = self.state
        if self.mode == "cusum":
            a = _cusum_inplace(st, r, self.b, self.lam)
        else:
            a = int(r > self.lam)
        raw = _window_inplace(st, a, self.p)
        if raw:
            self.flag = True
            self._quiet = 0
        elif self.flag:
            self._quiet += 1
            if self._quiet >= self.clearance_samples:
                self.flag = False
        self.last_alpha = a
        return a, raw, self.flag


def mars_detector(cfg: DetectorConfig, rate: float) -> SlidingWindowDetector:
    return SlidingWindowDetector(cfg.b, cfg.lam, cfg.window, cfg.p, "cusum",
                                 int(round(cfg.clearance_time * rate)))


def chi2_detector(cfg: DetectorConfig) -> SlidingWindowDetector:
    return SlidingWindowDetector(0.0, cfg.chi2_threshold, cfg.bench_window, cfg.bench_p,
                                 "threshold")


def bench_cusum_detector(cfg: DetectorConfig) -> SlidingWindowDetector:
    return SlidingWindowDetector(cfg.bench_b, cfg.bench_lam, cfg.bench_window, cfg.bench_p,
                                 "cusum")


# ---------------------------------------------------------------- offline evaluation


@dataclass
class Dataset:
    """One labelled residual stream; ``r`` is NaN where no sample exists."""

    name: str
    t: np.ndarray
    r: np.ndarray
    label: np.ndarray

    @property
    def attack_start(self) -> float | None:
        idx = np.flatnonzero(self.label > 0)
        return float(self.t[idx[0]]) if idx.size else None


def write_dataset(path, t, r, label):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "r", "label"])
        for ti, ri, li in zip(t, r, label):
            w.writerow([f"{ti:.6f}", "nan" if ri != ri else repr(float(ri)), int(li)])


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except (OSError, ValueError) as exc:
        raise InvalidInputError(f"cannot read dataset {path}: {exc}") from None
    names = data.dtype.names or ()
    if not {"t", "r", "label"} <= set(names):
        raise InvalidInputError(f"{path}: dataset needs columns t, r, label")
    label = np.asarray(data["label"])
    if np.any(~np.isfinite(label)):
        raise InvalidInputError(f"{path}: unlabeled samples")
    return Dataset(path.stem, np.atleast_1d(data["t"]), np.atleast_1d(data["r"]).astype(float),
                   np.atleast_1d(label).astype(int))


def load_datasets(directory) -> list:
    directory = Path(directory)
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise InvalidInputError(f"no dataset CSV files in {directory}")
    return [read_dataset(f) for f in files]


def run_detector(r, detector: str, threshold: float, cfg: DetectorConfig):
    """Apply a detector to a residual stream; returns ``(alpha, alpha_s)``."""
    r = np.ascontiguousarray(r, dtype=float)
    if detector == "mars":
        return K.detect_stream(r, cfg.b, threshold, cfg.window, cfg.p, True)
    if detector == "cusum":
        return K.detect_stream(r, cfg.bench_b, threshold, cfg.bench_window, cfg.bench_p, True)
    if detector == "chi2":
        return K.detect_stream(r, 0.0, threshold, cfg.bench_window, cfg.bench_p, False)
    raise InvalidInputError(f"unknown detector {detector!r}")


def default_thresholds(datasets, detector: str, cfg: DetectorConfig, n: int = 200) -> np.ndarray:
    """Threshold sweep spanning 'always alarm' to 'never alarm'.

    For the CUSUM detectors the sweep variable is ``lam``; the upper end is
    the total positive drift mass of the longest stream, above which no
    alarm is possible.
    """
    vals = np.concatenate([d.r[np.isfinite(d.r)] for d in datasets])
    if detector == "chi2":
        hi = float(np.max(vals)) if vals.size else 1.0
        lo = float(np.min(vals)) if vals.size else 0.0
        inner = np.unique(np.quantile(vals, np.linspace(0, 1, n)))
        return np.unique(np.concatenate([[lo - 1.0], inner, [hi + 1.0]]))
    b = cfg.b if detector == "mars" else cfg.bench_b
    mass = max(float(np.sum(np.clip(d.r[np.isfinite(d.r)] - b, 0, None))) for d in datasets)
    top = max(mass, 1.0) * 1.01
    inner = np.geomspace(1e-3, top, n)
    return np.unique(np.concatenate([[0.0], inner, [top * 10]]))


@dataclass
class RocResult:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    response_times: np.ndarray  # per threshold, mean over datasets (NaN if never)
    detected_fraction: np.ndarray

    def auc(self) -> float:
        """Area under the ROC curve (trapezoid rule on FPR-sorted points)."""
        pts = sorted(set(zip(self.fpr.tolist(), self.tpr.tolist())) | {(0.0, 0.0), (1.0, 1.0)})
        f = np.array([p[0] for p in pts])
        t = np.array([p[1] for p in pts])
        # vertical segments (equal FPR) have zero width and add no area
        return float(np.sum(np.diff(f) * 0.5 * (t[1:] + t[:-1])))

    def operating_point(self, max_fpr: float = 0.01) -> int:
        """Index of the threshold with the highest TPR subject to FPR <= max_fpr."""
        ok = np.flatnonzero(self.fpr <= max_fpr + 1e-12)
        if ok.size == 0:
            return int(np.argmin(self.fpr))
        best = ok[np.argmax(self.tpr[ok])]
        # among ties prefer the smallest FPR
        ties = ok[self.tpr[ok] == self.tpr[best]]
        return int(ties[np.argmin(self.fpr[ties])])

    def tpr_at(self, max_fpr: float = 0.01) -> float:
        return float(self.tpr[self.operating_point(max_fpr)])

    def response_time_at(self, max_fpr: float = 0.01) -> float:
        return float(self.response_times[self.operating_point(max_fpr)])


def roc_eval(datasets, detector: str, cfg: DetectorConfig, thresholds=None) -> RocResult:
    """TPR/FPR of the system flag per sample, swept over thresholds.

    TPR is the fraction of attack-labelled samples flagged, FPR the
    fraction of clean samples flagged. Response time is the first flagged
    sample at or after the attack start minus the attack start, averaged
    over the datasets that ever detect.
    """
    if not datasets:
        raise InvalidInputError("no datasets")
    if thresholds is None:
        thresholds = default_thresholds(datasets, detector, cfg)
    thresholds = np.asarray(thresholds, float)
    n_pos = sum(int(np.sum(d.label > 0)) for d in datasets)
    n_neg = sum(int(np.sum(d.label == 0)) for d in datasets)
    tp = np.zeros(thresholds.size)
    fp = np.zeros(thresholds.size)
    rt = np.full(thresholds.size, np.nan)
    frac = np.zeros(thresholds.size)
    for j, thr in enumerate(thresholds):
        times = []
        for d in datasets:
            _, flags = run_detector(d.r, detector, thr, cfg)
            pos = d.label > 0
            tp[j] += np.sum(flags[pos] > 0)
            fp[j] += np.sum(flags[~pos] > 0)
            start = d.attack_start
            if start is not None:
                hit = np.flatnonzero((flags > 0) & (d.t >= start - 1e-9))
                if hit.size:
                    times.append(float(d.t[hit[0]] - start))
        if times:
            rt[j] = float(np.mean(times))
            frac[j] = len(times) / sum(d.attack_start is not None for d in datasets)
    fpr = fp / n_neg if n_neg else np.zeros_like(fp)
    tpr = tp / n_pos if n_pos else np.zeros_like(tp)
    return RocResult(thresholds, fpr, tpr, rt, frac)


def write_roc(path, result: RocResult, detector: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["detector", "threshold", "fpr", "tpr", "response_time"])
        for thr, f, t, r in zip(result.thresholds, result.fpr, result.tpr, result.response_times):
            w.writerow([detector, repr(float(thr)), repr(float(f)), repr(float(t)),
                        "nan" if r != r else repr(float(r))])


# ---------------------------------------------------------------- calibration


def point_alarm_rate(streams, b: float, lam: float) -> float:
    """Point alarms per sample of the lagged CUSUM over clean streams."""
    alarms = n = 0
    for r in streams:
        r = np.ascontiguousarray(r, dtype=float)
        alpha, _ = K.detect_stream(r, b, lam, 1, 0.5, True)
        alarms += int(np.sum(alpha))
        n += int(np.sum(np.isfinite(r)))
    return alarms / max(n, 1)


def calibrate_drift(streams, n_std: float = 2.0) -> float:
    """Drift ``b`` = mean + ``n_std`` standard deviations of clean residuals."""
    vals = np.concatenate([np.asarray(r, float) for r in streams])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        raise InvalidInputError("no finite residual samples")
    return float(np.mean(vals) + n_std * np.std(vals))


def calibrate_threshold(streams, b: float, target_rate: float = 1e-4, tol: float = 1e-3) -> float:
    """Smallest ``lam`` whose clean point-alarm rate is at most ``target_rate``.

    Bisection is valid because the alarm count never increases with ``lam``.
    """
    lo, hi = 0.0, 1.0
    while point_alarm_rate(streams, b, hi) > target_rate:
        lo, hi = hi, hi * 2.0
        if hi > 1e12:
            raise NumericalError("threshold calibration did not converge")
    while hi - lo > tol * max(hi, 1.0):
        mid = 0.5 * (lo + hi)
        if point_alarm_rate(streams, b, mid) > target_rate:
            lo = mid
        else:
            hi = mid
    return hi
