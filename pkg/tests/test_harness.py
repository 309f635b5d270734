import csv
import json
import math

import numpy as np
import pytest

from quadguard import cli
from quadguard.config import MissionConfig, default_config
from quadguard.harness import Simulator, crash_check, run_scenario, write_outputs
from quadguard.harness.datasets import by_attack, generate_datasets
from quadguard.harness.lpf import ImuLowPass, lpf_recovery
from quadguard.harness.metrics import lateral_rmse, rotor_rms, tilt_angles
from quadguard.harness.mission import Mission, distance_to_path
from quadguard.harness.simulate import COL, COLUMNS
from quadguard.harness.sweep import cell_means, parse_grid, sweep
from quadguard.errors import ConfigError
from quadguard.quaternion import from_euler
from quadguard.sensors import SensorFrame


# ---------------------------------------------------------------- crash check

def test_crash_check_ground():
    x = np.zeros(13)
    x[6] = 1.0
    x[2] = -2.0
    assert not crash_check(x)
    x[2] = 0.01
    assert crash_check(x)


def test_inverted_tumble_counts_as_crash(cfg):
    cfg.scenario.duration = 3.0
    sim = Simulator(cfg, 0)
    sim.x[6:10] = from_euler(math.pi, 0, 0)
    sim.x[2] = -50.0
    sim.run()
    assert sim.crashed and sim.crash_reason in ("attitude", "ground")
    if sim.crash_reason == "attitude":
        assert sim.crash_time >= cfg.scenario.crash_tilt_time - 1e-9


# ---------------------------------------------------------------- LPF

def test_lpf_dc_gain():
    f = ImuLowPass(30.0, 250.0)
    for _ in range(50):
        y = f.step(np.full(6, 3.7))
    assert np.allclose(y, 3.7, atol=1e-12)


def test_lpf_attenuates_100hz():
    f = ImuLowPass(30.0, 250.0)
    n = np.arange(2500)
    x = np.sin(2 * math.pi * 100 * n / 250 + 0.3)
    y = np.array([f.step(np.full(6, v))[0] for v in x])
    gain = np.sqrt(np.mean(y[500:] ** 2) / np.mean(x[500:] ** 2))
    assert 20 * math.log10(gain) <= -20.0


def test_lpf_reduces_white_noise_variance(rng):
    f = ImuLowPass(30.0, 250.0)
    x = rng.standard_normal((5000, 6))
    y = np.array([f.step(v) for v in x])
    assert np.all(y[100:].var(axis=0) < x[100:].var(axis=0))


def test_lpf_frames_only_touch_imu():
    frames = [SensorFrame(k * 0.004, np.ones(3) * k, np.ones(3), 0.1, np.ones(3), np.zeros(3),
                          np.ones(4), {"imu": True}) for k in range(5)]
    out = lpf_recovery(frames)
    assert all(o.yaw == 0.1 and np.array_equal(o.gps_position, np.ones(3)) for o in out)
    assert not np.array_equal(out[4].accel, frames[4].accel)


# ---------------------------------------------------------------- metrics

def test_rotor_rms_constant_is_zero():
    assert rotor_rms(np.full((500, 4), 1500.0)) == 0.0


def test_rotor_rms_of_tone():
    n = np.arange(2500)
    s = 1500 + 10 * np.sin(2 * math.pi * 20 * n / 250)
    assert math.isclose(rotor_rms(np.tile(s[:, None], 4)), 10 / math.sqrt(2), rel_tol=0.02)


def test_lateral_rmse_on_path_is_zero():
    path = np.array([[0, 0, -5.0], [10, 0, -5.0]])
    pts = np.column_stack([np.linspace(0, 10, 50), np.zeros(50), np.full(50, -5.0)])
    assert lateral_rmse(pts, path) < 1e-12
    pts[:, 1] = 0.3
    assert math.isclose(lateral_rmse(pts, path), 0.3)


def test_distance_to_polyline_corner():
    path = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0.0]])
    d = distance_to_path(np.array([[2, -1, 0.0], [0.5, 0.2, 0]]), path)
    assert np.allclose(d, [math.sqrt(2), 0.2])


def test_tilt_angles():
    q = np.vstack([from_euler(0, 0, 1.0), from_euler(0.3, 0, 0), from_euler(0, -0.2, 2.0)])
    assert np.allclose(tilt_angles(q), [0.0, 0.3, 0.2], atol=1e-12)


# ---------------------------------------------------------------- mission

def mission_cfg(**kw):
    base = dict(kind="LineTrack", start=np.array([0, 0, -5.0]), start_yaw=0.0,
                waypoints=[], cruise_speed=1.0, completion_radius=0.3, line_length=4.0,
                square_side=2.0, start_delay=0.0)
    base.update(kw)
    return MissionConfig(**base)


def test_mission_follows_ideal_vehicle():
    m = Mission(mission_cfg())
    t = 0.0
    while not m.done and t < 20:
        sp, _, _ = m.setpoint()
        m.advance(t, 0.01, sp)
        t += 0.01
    assert m.done and 3.9 < m.completion_time < 4.2


def test_mission_leash_holds_carrot():
    m = Mission(mission_cfg())
    for k in range(500):
        m.advance(k * 0.01, 0.01, np.array([0, 0, -5.0]))
    sp, _, _ = m.setpoint()
    assert math.isclose(sp[0], 1.0)
    assert not m.done


def test_mission_dwell_and_square():
    m = Mission(mission_cfg(kind="SquareTrack"))
    assert len(m.waypoints) == 4
    assert np.allclose(m.reference_path()[-1], [0, 0, -5])
    m = Mission(mission_cfg(kind="WaypointVisit", waypoints=[[1, 0, -5, 0.5, 1.0]]))
    t = 0.0
    while not m.done:
        sp, yaw, _ = m.setpoint()
        m.advance(t, 0.01, sp)
        t += 0.01
    assert m.completion_time >= 1.0 + 1.0 - 0.05
    assert m.yaw == 0.5


def test_hover_mission_has_no_waypoints():
    m = Mission(mission_cfg(kind="Hover"))
    assert m.done and m.completion_time is None
    sp, _, v = m.setpoint()
    assert np.allclose(sp, [0, 0, -5]) and np.all(v == 0)


# ---------------------------------------------------------------- scenario runs

def test_clean_hover_baseline(cfg):
    cfg.scenario.duration = 15.0
    res = run_scenario(cfg, 1)
    m = res.metrics
    assert m.survived and m.brake_count == 0
    assert set(res.column("phase")) == {0.0}
    assert m.lateral_rmse < 0.1


def test_outputs_written(cfg, tmp_path):
    cfg.scenario.duration = 6.0
    cfg.attack.kind = "ArDos"
    cfg.attack.start_time = 3.0
    cfg.attack.stop_time = 5.0
    res = run_scenario(cfg, 2)
    paths = write_outputs(res, tmp_path)
    with open(paths["timeseries"]) as fh:
        header = fh.readline().strip().split(",")
    assert header == list(COLUMNS)
    data = np.loadtxt(paths["timeseries"], delimiter=",", skiprows=1)
    assert data.shape == res.log.shape
    events = [json.loads(line) for line in paths["events"].read_text().splitlines()]
    assert any(e["event"] == "phase" and e["to"] == "Brake" for e in events)
    assert all("t" in e for e in events)
    with open(paths["metrics"]) as fh:
        row = next(csv.DictReader(fh))
    assert row["survived"] == "True"


def test_determinism_and_seed_sensitivity(cfg, tmp_path):
    cfg.scenario.duration = 4.0
    cfg.attack.kind = "ArSwitch"
    cfg.attack.start_time = 2.5
    a = write_outputs(run_scenario(cfg, 5), tmp_path / "a")["timeseries"].read_bytes()
    b = write_outputs(run_scenario(cfg, 5), tmp_path / "b")["timeseries"].read_bytes()
    c = write_outputs(run_scenario(cfg, 6), tmp_path / "c")["timeseries"].read_bytes()
    assert a == b and a != c


def test_snapshot_branch_equals_direct_run(cfg):
    import copy
    cfg.scenario.duration = 6.0
    base = Simulator(cfg, 3).run(until=3.0)
    branch = copy.deepcopy(base)
    prof = copy.deepcopy(cfg.attack)
    prof.kind, prof.start_time, prof.stop_time = "ArDos", 4.0, 6.0
    branch.set_attack(prof)
    branch.run()
    cfg2 = cfg.copy()
    cfg2.attack = prof
    direct = Simulator(cfg2, 3).run()
    assert np.array_equal(branch.log, direct.log, equal_nan=True)


def test_alarm_recovery_within_five_seconds(cfg):
    cfg.scenario.duration = 20.0
    cfg.attack.kind = "ArDos"
    cfg.attack.start_time = 10.0
    cfg.attack.stop_time = 11.0
    res = run_scenario(cfg, 0)
    tr = [e for e in res.events if e["event"] == "phase"]
    seq = [(e["from"], e["to"]) for e in tr]
    assert seq[:3] == [("Normal", "Brake"), ("Brake", "HoverRestore"),
                       ("HoverRestore", "RecoveredFlight")]
    assert tr[2]["t"] - tr[0]["t"] < 5.0
    normal = [e["t"] for e in tr if e["to"] == "Normal"]
    # flag clears only after the clearance window that follows the attack
    assert normal and normal[0] >= 11.0 + cfg.detector.clearance_time - 1e-6


def test_alarm_phase_never_uses_imu(cfg):
    cfg.scenario.duration = 8.0
    cfg.attack.kind = "EmiSaturation"
    cfg.attack.start_time = 4.0
    cfg.attack.stop_time = 8.0
    res = run_scenario(cfg, 0)
    phase = res.column("phase")
    att = res.column("attack_active") > 0
    # once braking starts the vehicle stays near level despite saturated IMU
    after = phase > 0
    assert after.any()
    tilt = tilt_angles(res.log[after][:, COL["true_qw"]:COL["true_qw"] + 4])
    assert np.max(tilt) < math.radians(30)
    assert res.metrics.survived and att.any()


# ---------------------------------------------------------------- sweep and datasets

def test_parse_grid_validation():
    with pytest.raises(ConfigError):
        parse_grid({"grid": {"attack": ["Laser"]}})
    with pytest.raises(ConfigError):
        parse_grid({"grid": {"duration": [1.0]}})
    with pytest.raises(ConfigError):
        parse_grid({"grid": {"seeds": 0}})
    base, axes, seeds = parse_grid({"grid": {"seeds": [3, 4], "recovery": ["mars"]}})
    assert seeds == [3, 4] and axes == [("scenario.recovery", ["mars"])]


def test_sweep_single_cell_matches_run(cfg):
    grid = {"base": {"scenario": {"duration": 3.0}}, "grid": {"seeds": [4], "attack": ["None"]}}
    rows = sweep(grid)
    assert len(rows) == 1
    cfg.scenario.duration = 3.0
    m = run_scenario(cfg, 4).metrics.to_row()
    for k, v in m.items():
        assert (rows[0][k] == v) or (isinstance(v, float) and math.isnan(v) and math.isnan(rows[0][k]))


def test_sweep_repeated_seed_identical():
    grid = {"base": {"scenario": {"duration": 2.0}}, "grid": {"seeds": [1, 1]}}
    rows = sweep(grid)
    a, b = rows
    assert {k: str(v) for k, v in a.items()} == {k: str(v) for k, v in b.items()}
    means = cell_means(rows, [])
    assert means[0]["runs"] == 2 and means[0]["failed"] == 0


def test_datasets_small(cfg, tmp_path):
    ds = generate_datasets(cfg, [0], tmp_path, kinds=("ArDos",), warmup=2.0, clean=3.0, attack=2.0)
    names = [d.name for d in ds["mars"]]
    assert names == ["ArDos_s0"]
    d = ds["mars"][0]
    assert d.attack_start == pytest.approx(5.0, abs=0.005)
    assert d.t[0] >= 2.0 - 1e-9
    assert (tmp_path / "mars" / "ArDos_s0.csv").exists()
    assert (tmp_path / "mahalanobis" / "ArDos_s0.csv").exists()
    assert list(by_attack(ds["mars"])) == ["ArDos"]


# ---------------------------------------------------------------- CLI

def test_cli_run_and_exit_codes(tmp_path):
    sc = tmp_path / "s.toml"
    sc.write_text('[scenario]\nduration = 2.0\n')
    assert cli.main(["run", "--scenario", str(sc), "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
    assert (tmp_path / "o" / "timeseries.csv").exists()
    assert cli.main(["run", "--scenario", str(tmp_path / "missing.toml"), "--out", "x"]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text('[attack]\nkind = "Laser"\n')
    assert cli.main(["run", "--scenario", str(bad), "--out", str(tmp_path / "b")]) == 2


def test_cli_numerical_failure_exit_code(tmp_path):
    sc = tmp_path / "s.toml"
    # process noise this large overflows the resilient filter's covariance
    sc.write_text('[scenario]\nduration = 2.0\n[estimation]\nrse_q_pos = 1e200\n')
    with np.errstate(over="ignore"):
        rc = cli.main(["run", "--scenario", str(sc), "--out", str(tmp_path / "o")])
    assert rc == 3


def test_plant_divergence_is_a_crash(cfg):
    cfg.scenario.duration = 2.0
    sim = Simulator(cfg, 0)
    sim.x[3] = 2 * cfg.scenario.divergence_limit
    sim.run()
    assert sim.crashed and sim.crash_reason == "diverged"


def test_cli_roc_and_sweep(tmp_path, capsys):
    from quadguard.detection import write_dataset
    rng = np.random.default_rng(0)
    for i in range(2):
        r = np.abs(np.r_[rng.normal(1, 0.3, 600), rng.normal(8, 1, 400)])
        write_dataset(tmp_path / "ds" / f"d{i}.csv", np.arange(1000) * 0.004, r,
                      np.r_[np.zeros(600, int), np.ones(400, int)])
    out = tmp_path / "roc.csv"
    assert cli.main(["roc", "--datasets", str(tmp_path / "ds"), "--detector", "mars",
                     "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["tpr"] > 0.9 and summary["fpr"] <= 0.01
    assert (tmp_path / "roc_summary.csv").exists()
    assert cli.main(["roc", "--datasets", str(tmp_path / "none"), "--detector", "chi2",
                     "--out", str(out)]) == 2
    grid = tmp_path / "g.toml"
    grid.write_text('[base]\nscenario = { duration = 1.0 }\n[grid]\nseeds = 2\n'
                    'recovery = ["mars", "lpf"]\n')
    assert cli.main(["sweep", "--grid", str(grid), "--out", str(tmp_path / "sw")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "sw" / "runs.csv")))
    assert len(rows) == 4 and all(r["error"] == "" for r in rows)
    assert (tmp_path / "sw" / "caption.txt").read_text().startswith("Recovery columns")
    with pytest.raises(SystemExit):
        cli.main(["roc", "--datasets", "x", "--detector", "svm", "--out", "y"])
