"""The synchronous 250 Hz software-in-the-loop simulation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..attacks import AttackInjector
from ..config import SimConfig
from ..control import Mixer, Phase, PositionController, RateController, RecoveryMachine
from ..control import attitude_controller, estimator_for, motor_lag
from ..detection import (belief_variance, bench_cusum_detector, chi2_detector, mars_detector,
                         reduce_residual, residual_vector)
from ..dynamics import step as plant_step
from ..dynamics import true_wrench
from ..errors import IntegrationDivergedError, NumericalError
from ..estimation import ResilientEstimator, StandardEstimator, mahalanobis
from ..quaternion import from_euler, to_euler, yaw_of
from ..sensors import SensorSuite
from .lpf import ImuLowPass
from .metrics import RunMetrics, lateral_rmse, rotor_rms, tilt_angles
from .mission import Mission, distance_to_path

PHASE_CODE = {Phase.NORMAL: 0, Phase.BRAKE: 1, Phase.HOVER_RESTORE: 2, Phase.RECOVERED_FLIGHT: 3}

_XN = ["px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz"]
COLUMNS = (
    ["t"]
    + [f"true_{n}" for n in _XN]
    + [f"std_{n}" for n in _XN]
    + [f"rse_{n}" for n in _XN]
    + [f"std_P{i}" for i in range(13)]
    + [f"rse_P{i}" for i in range(13)]
    + ["accel_x", "accel_y", "accel_z", "gyro_x", "gyro_y", "gyro_z"]
    + ["gps_px", "gps_py", "gps_pz", "gps_vx", "gps_vy", "gps_vz", "compass_yaw"]
    + [f"tach_{i}" for i in range(1, 5)]
    + [f"omega_{i}" for i in range(1, 5)]
    + [f"omega_cmd_{i}" for i in range(1, 5)]
    + ["f_x", "f_y", "f_z", "tau_x", "tau_y", "tau_z"]
    + ["fhat_x", "fhat_y", "fhat_z", "tauhat_x", "tauhat_y", "tauhat_z"]
    + ["sp_x", "sp_y", "sp_z"]
    + ["residual", "cusum_S", "DR", "alpha", "alpha_s", "flag"]
    + ["mahalanobis", "chi2_alpha_s", "bcusum_alpha_s"]
    + ["phase", "attack_active", "mixer_saturated"]
)
COL = {name: i for i, name in enumerate(COLUMNS)}


def _sl(first: str, n: int) -> slice:
    i = COL[first]
    return slice(i, i + n)


S_TRUE, S_STD, S_RSE = _sl("true_px", 13), _sl("std_px", 13), _sl("rse_px", 13)
S_STDP, S_RSEP = _sl("std_P0", 13), _sl("rse_P0", 13)
S_IMU, S_GPS = _sl("accel_x", 6), _sl("gps_px", 7)
S_TACH, S_OM, S_CMD = _sl("tach_1", 4), _sl("omega_1", 4), _sl("omega_cmd_1", 4)
S_U, S_UHAT, S_SP = _sl("f_x", 6), _sl("fhat_x", 6), _sl("sp_x", 3)
S_DET = _sl("residual", 6)
S_BENCH = _sl("mahalanobis", 3)
S_MISC = _sl("phase", 3)


def crash_check(x, z_ground: float = 0.0) -> bool:
    """Instantaneous crash test: at or below the ground plane (NED, z >= 0)."""
    return bool(x[2] >= z_ground)


@dataclass
class RunResult:
    config: SimConfig
    metrics: RunMetrics
    log: np.ndarray
    events: list = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return self.log[:, COL[name]]

    def write(self, out_dir) -> dict:
        return write_outputs(self, out_dir)


class Simulator:
    """One scenario instance. Owns every piece of mutable state, so a
    ``copy.deepcopy`` of a simulator is an independent branch."""

    def __init__(self, cfg: SimConfig, seed: int | None = None):
        cfg = cfg.copy()
        if seed is not None:
            cfg.scenario.seed = int(seed)
        cfg.validate()
        self.cfg = cfg
        sc = cfg.scenario
        p = cfg.vehicle
        self.params = p
        self.dt = sc.dt
        self.rate = 1.0 / sc.dt
        ss = np.random.SeedSequence(sc.seed)
        s_sensors, s_attack = ss.spawn(2)
        start = np.asarray(cfg.mission.start, float)
        q0 = from_euler(0.0, 0.0, cfg.mission.start_yaw)
        self.x = np.concatenate([start, np.zeros(3), q0, np.zeros(3)])
        self.omega = np.full(4, p.hover_speed)
        self.omega_cmd = self.omega.copy()
        self.sensors = SensorSuite(cfg.sensors, p, s_sensors)
        self.attack_seed = s_attack
        self.injector = AttackInjector(cfg.attack, cfg.sensors.imu_rate, s_attack)
        self.lpf = ImuLowPass(sc.lpf_cutoff, cfg.sensors.imu_rate) if sc.recovery == "lpf" else None
        self.std = StandardEstimator(self.x, cfg.estimation, p, self.dt)
        self.rse = ResilientEstimator(self.x, cfg.estimation, p, self.dt)
        self.mars = mars_detector(cfg.detector, cfg.sensors.imu_rate)
        self.chi2 = chi2_detector(cfg.detector)
        self.bcusum = bench_cusum_detector(cfg.detector)
        self.machine = RecoveryMachine(cfg.control)
        self.mission = Mission(cfg.mission)
        self.posctl = PositionController(cfg.control, p)
        self.ratectl = RateController(cfg.control, p, self.dt)
        self.mixer = Mixer(p)
        self.pos_every = max(1, int(round(self.rate / cfg.control.position_rate)))
        self.q_ref = q0.copy()
        self.T_ref = p.mass * p.gravity
        self.frozen_sp = None
        self.k = 0
        self.t = 0.0
        self.n_total = int(round(sc.duration / sc.dt))
        self.log = np.full((self.n_total, len(COLUMNS)), np.nan)
        self.events = []
        self.crashed = False
        self.crash_reason = ""
        self.crash_time = math.nan
        self._tilt_since = None
        self._prev_flag = False
        self._attack_on = False
        self._saturated = False
        self.first_alarm_after_attack = math.nan
        self._attack_start = cfg.attack.windows()[0][0] if cfg.attack.windows() else math.nan
        self.wrench_true = np.zeros(6)

    def set_attack(self, profile):
        """Replace the attack profile mid-run (used to branch a snapshot)."""
        profile.validate(self.cfg.sensors.imu_rate)
        self.cfg.attack = profile
        self.injector = AttackInjector(profile, self.cfg.sensors.imu_rate, self.attack_seed)
        w = profile.windows()
        self._attack_start = w[0][0] if w else math.nan
        self.first_alarm_after_attack = math.nan

    # ------------------------------------------------------------ helpers
    def _event(self, name: str, **data):
        self.events.append({"t": round(self.t, 6), "event": name, **data})

    @property
    def phase(self) -> Phase:
        return self.machine.phase

    def _control_belief(self):
        if self.cfg.scenario.control_source == "resilient":
            return self.rse.belief
        return self.std.belief if estimator_for(self.machine.phase) == "standard" else self.rse.belief

    # ------------------------------------------------------------ one tick
    def step(self):
        cfg = self.cfg
        p = self.params
        k, t, dt = self.k, self.t, self.dt
        x = self.x

        u = true_wrench(x, self.omega, p)
        self.wrench_true = u
        frame = self.sensors.sample(k, t, x, u, self.omega)
        attacked = self.injector.inject(frame)
        active = self.injector.is_active(t)
        if active != self._attack_on:
            self._event("attack_start" if active else "attack_stop", attack=cfg.attack.kind)
            self._attack_on = active
        std_frame = self.lpf.apply(attacked) if self.lpf is not None else attacked

        try:
            self.std.step(std_frame)
        except NumericalError as exc:
            self._event("standard_estimator_reset", reason=str(exc))
            self.std.reseed(self.rse.belief)
            self.std.updated = False
        self.rse.step(attacked)

        rse_x = self.rse.belief.x
        r = math.nan
        alpha = 0
        raw = False
        armed = t >= cfg.detector.arm_time - 1e-9
        if attacked.fresh.get("imu", True):
            rv = residual_vector(attacked.accel, attacked.gyro, rse_x, self.rse.wrench, p)
            extra = (belief_variance(self.rse.belief.P, p)
                     if cfg.detector.residual_scale == "belief" else None)
            r = reduce_residual(rv, cfg.sensors, cfg.detector.reduction, extra)
            if armed:
                alpha, raw, _ = self.mars.step(r)
        flag = self.mars.flag
        if flag and not self._prev_flag:
            self._event("alarm", residual=float(r))
            if math.isnan(self.first_alarm_after_attack) and t >= self._attack_start - 1e-9:
                self.first_alarm_after_attack = t - self._attack_start
        elif not flag and self._prev_flag:
            self._event("alarm_cleared")
        self._prev_flag = flag

        d = math.nan
        if self.std.updated and self.std.innovation is not None and self.std.innovation.size == 7:
            d = mahalanobis(self.std.innovation, self.std.S)
            if armed:
                self.chi2.step(d)
                self.bcusum.step(d)

        # recovery phase machine
        if cfg.scenario.recovery == "mars":
            before = self.machine.phase
            n_tr = len(self.machine.transitions)
            after = self.machine.step(flag, float(np.linalg.norm(rse_x[3:6])), t)
            if len(self.machine.transitions) != n_tr:
                self._on_transition(before, after)

        # mission and setpoint
        ph = self.machine.phase
        ctl = self._control_belief().x
        if ph in (Phase.NORMAL, Phase.RECOVERED_FLIGHT):
            self.mission.advance(t, dt, ctl[0:3], x[0:3])
            sp, sp_yaw, v_ff = self.mission.setpoint()
            if self.mission.completion_time == t:
                self._event("mission_complete")
        else:
            sp, sp_yaw = self.frozen_sp
            v_ff = None
        limit = None
        if ph == Phase.RECOVERED_FLIGHT and cfg.control.speed_cap > 0:
            limit = cfg.control.speed_cap

        # controllers
        if k % self.pos_every == 0:
            self.q_ref, self.T_ref, _ = self.posctl.update(ctl[0:3], ctl[3:6], sp, sp_yaw, v_ff, limit)
        rates_ref = attitude_controller(ctl[6:10], self.q_ref, cfg.control)
        tau = self.ratectl.update(ctl[10:13], rates_ref)
        mix = self.mixer(tau, self.T_ref)
        self.omega_cmd = mix.speeds
        self._saturated = mix.saturated
        omega_next = motor_lag(mix.speeds, self.omega, cfg.control.motor_time_constant, dt)

        # plant
        try:
            x_next = plant_step(x, u, p, dt, k)
        except IntegrationDivergedError:
            x_next = np.full(13, np.nan)

        self._log_row(k, t, x, attacked, u, sp, r, alpha, raw, flag, d, active)

        self.x = x_next
        self.omega = omega_next
        self.k += 1
        self.t = self.k * dt
        self._check_crash()

    def _on_transition(self, before: Phase, after: Phase):
        rse = self.rse.belief.x
        self._event("phase", **{"from": before.value, "to": after.value})
        if after == Phase.BRAKE:
            self.frozen_sp = (rse[0:3].copy(), yaw_of(rse[6:10]))
        elif after == Phase.RECOVERED_FLIGHT:
            self.mission.resync(rse[0:3])
        elif after == Phase.NORMAL:
            self.std.reseed(self.rse.belief)
            self.mission.resync(rse[0:3])

    def _check_crash(self):
        sc = self.cfg.scenario
        x = self.x
        reason = ""
        if not np.isfinite(x).all() or np.any(np.abs(x[0:6]) > sc.divergence_limit):
            reason = "diverged"
        elif crash_check(x):
            reason = "ground"
        else:
            roll, pitch, _ = to_euler(x[6:10])
            if max(abs(roll), abs(pitch)) > math.radians(sc.crash_tilt_deg):
                if self._tilt_since is None:
                    self._tilt_since = self.t
                if self.t - self._tilt_since >= sc.crash_tilt_time - 1e-9:
                    reason = "attitude"
            else:
                self._tilt_since = None
        if reason:
            self.crashed = True
            self.crash_reason = reason
            self.crash_time = self.t
            self._event("crash", reason=reason)

    def _log_row(self, k, t, x, frame, u, sp, r, alpha, raw, flag, d, active):
        row = self.log[k]
        row[0] = t
        row[S_TRUE] = x
        row[S_STD] = self.std.belief.x
        row[S_RSE] = self.rse.belief.x
        row[S_STDP] = np.diag(self.std.belief.P)
        row[S_RSEP] = np.diag(self.rse.belief.P)
        row[S_IMU] = np.concatenate([frame.accel, frame.gyro])
        row[S_GPS] = frame.observation()
        row[S_TACH] = frame.rotor_speeds
        row[S_OM] = self.omega
        row[S_CMD] = self.omega_cmd
        row[S_U] = u
        row[S_UHAT] = self.rse.wrench
        row[S_SP] = sp
        st = self.mars.state
        row[S_DET] = (r, st.S, st.DR, alpha, float(raw), float(flag))
        row[S_BENCH] = (d, float(self.chi2.state.alpha_s), float(self.bcusum.state.alpha_s))
        row[S_MISC] = (PHASE_CODE[self.machine.phase], float(active), float(self._saturated))

    # ------------------------------------------------------------ driver
    def run(self, until: float | None = None) -> "Simulator":
        """Step until ``until`` (default: scenario duration) or a crash."""
        n_end = self.n_total if until is None else min(self.n_total, int(round(until / self.dt)))
        while self.k < n_end and not self.crashed:
            self.step()
        return self

    def result(self) -> RunResult:
        n = self.k
        log = self.log[:n]
        return RunResult(self.cfg, compute_metrics(self, log), log, list(self.events))


def compute_metrics(sim: Simulator, log: np.ndarray) -> RunMetrics:
    cfg = sim.cfg
    dt = sim.dt
    duration = cfg.scenario.duration
    survived = not sim.crashed
    survival_time = duration if survived else float(sim.crash_time)
    t = log[:, 0]
    omega = log[:, S_OM]
    windows = cfg.attack.windows()
    win = max(1, int(round(1.0 / dt)))
    if windows:
        a0, a1 = windows[0][0], windows[-1][1]
        pre, att, post = t < a0, (t >= a0) & (t < a1), t >= a1
    else:
        pre, att, post = np.ones_like(t, bool), np.zeros_like(t, bool), np.zeros_like(t, bool)
    path = sim.mission.reference_path()
    pos = log[:, S_TRUE][:, 0:3]
    dev = distance_to_path(pos, path) if len(pos) else np.array([np.nan])
    tilt = tilt_angles(log[:, S_TRUE][:, 6:10]) if len(log) else np.array([np.nan])
    brakes = sum(1 for e in sim.events if e["event"] == "phase" and e["to"] == "Brake")
    ct = sim.mission.completion_time
    return RunMetrics(
        survived=survived,
        survival_time=float(survival_time),
        crash_reason=sim.crash_reason,
        rotor_rms_pre=rotor_rms(omega[pre], win) if pre.any() else math.nan,
        rotor_rms_attack=rotor_rms(omega[att], win) if att.any() else math.nan,
        rotor_rms_post=rotor_rms(omega[post], win) if post.any() else math.nan,
        lateral_rmse=lateral_rmse(pos, path),
        completion_time=math.nan if ct is None else float(ct),
        mission_completed=ct is not None,
        detector_response_time=float(sim.first_alarm_after_attack),
        brake_count=brakes,
        max_tilt=float(np.nanmax(tilt)),
        tilt_std=float(np.nanstd(tilt)),
        max_position_deviation=float(np.nanmax(dev)),
    )


def run_scenario(cfg: SimConfig, seed: int | None = None) -> RunResult:
    """Run one scenario to completion (or crash)."""
    return Simulator(cfg, seed).run().result()


# ---------------------------------------------------------------- output


def write_outputs(result: RunResult, out_dir) -> dict:
    """Write ``timeseries.csv``, ``events.jsonl`` and ``metrics.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ts = out / "timeseries.csv"
    np.savetxt(ts, result.log, delimiter=",", header=",".join(COLUMNS), comments="", fmt="%.10g")
    ev = out / "events.jsonl"
    with open(ev, "w") as fh:
        for e in result.events:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    mt = out / "metrics.csv"
    row = result.metrics.to_row()
    with open(mt, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)
    return {"timeseries": ts, "events": ev, "metrics": mt}
