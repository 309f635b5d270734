import numpy as np
import pytest

from quadguard.config import default_config, from_dict, load_config
from quadguard.errors import ConfigError


def test_defaults_valid():
    cfg = default_config()
    assert cfg.scenario.dt == 0.004
    assert cfg.vehicle.symmetric
    assert sorted(cfg.vehicle.spin.tolist()) == [-1, -1, 1, 1]


def test_toml_file_and_overrides(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text('[attack]\nkind = "ArDos"\n[scenario]\nduration = 12.0\n')
    cfg = load_config(p, {"scenario": {"seed": 7}})
    assert cfg.attack.kind == "ArDos" and cfg.scenario.duration == 12.0
    assert cfg.scenario.seed == 7
    assert cfg.attack.accel_amplitude == 100.0


@pytest.mark.parametrize("data,match", [
    ({"bogus": {}}, "unknown table"),
    ({"scenario": {"durration": 1.0}}, "unknown key"),
    ({"attack": {"kind": "Laser"}}, "attack.kind"),
    ({"vehicle": {"mass": -1.0}}, "mass"),
    ({"vehicle": {"kd": [1.0, 2.0]}}, "shape"),
    ({"scenario": {"seed": 1.5}}, "integer"),
    ({"sensors": {"strict_schedule": 1}}, "boolean"),
    ({"scenario": {"dt": 0.002}}, "dt"),
    ({"detector": {"residual_scale": "foo"}}, "residual_scale"),
    ({"scenario": {"control_source": "imu"}}, "control_source"),
])
def test_invalid_configs(data, match):
    with pytest.raises(ConfigError, match=match):
        from_dict(data)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("[scenario\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_round_trip_to_dict():
    cfg = default_config()
    again = from_dict(cfg.to_dict())
    for sec, vals in cfg.to_dict().items():
        for k, v in vals.items():
            w = getattr(getattr(again, sec), k)
            assert np.array_equal(np.asarray(v), np.asarray(w)), (sec, k)


def test_copy_is_deep():
    a = default_config()
    b = a.copy()
    b.vehicle.kd[0] = 99.0
    assert a.vehicle.kd[0] != 99.0


def test_waypoint_mission_needs_points():
    with pytest.raises(ConfigError):
        from_dict({"mission": {"kind": "WaypointVisit", "waypoints": []}})
    cfg = from_dict({"mission": {"kind": "WaypointVisit", "waypoints": [[1, 0, -5, 0, 0]]}})
    assert cfg.mission.kind == "WaypointVisit"
