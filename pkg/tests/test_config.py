import json
import math

import pytest

from bearing_phd.config import ConfigError, config_from_dict, load_config, loads_config, parse_quantity

BASE = {
    "sensor": {"p_fn": 0.21, "d_t_in": 1.28, "theta_sep_deg": 0.5, "sigma_deg": 2.25, "theta_c_pi": 0.2, "p_u": 0.725, "mu": 0.5319},
}


def _cfg(**sections):
    d = json.loads(json.dumps(BASE))
    for k, v in sections.items():
        d.setdefault(k, {}).update(v)
    return d


def test_units_converted_at_load():
    c = config_from_dict(_cfg(), check_files=False)
    s = c.sensor
    assert s.measurement.sigma == pytest.approx(math.radians(2.25))
    assert s.detection.d_t == pytest.approx(1.28 * 0.0254)
    assert s.detection.theta_sep == pytest.approx(math.radians(0.5))
    assert s.clutter.theta_c == pytest.approx(0.2 * math.pi)
    assert s.fov.b_min == pytest.approx(-0.75 * math.pi) and s.fov.r_max == 5.0


def test_default_beam_separation():
    d = _cfg()
    del d["sensor"]["theta_sep_deg"]
    assert config_from_dict(d, check_files=False).sensor.detection.theta_sep == pytest.approx(math.radians(0.25))


def test_length_units():
    d = _cfg(sensor={"r_max_cm": 450})
    assert config_from_dict(d, check_files=False).sensor.fov.r_max == pytest.approx(4.5)


def test_round_trip_identity(tmp_path):
    (tmp_path / "m.map").write_text("resolution 0.5\n....\n....\n")
    d = _cfg(world={"map": "m.map", "targets_m": [[1, 1]], "robots_m_rad": [[0.5, 0.5, 0.0]], "n_scans": 3}, filter={"birth_rate": 0.02})
    (tmp_path / "c.json").write_text(json.dumps(d))
    a = load_config(tmp_path / "c.json")
    b = loads_config(a.dumps(), str(tmp_path))
    assert b.to_dict() == a.to_dict()
    assert b.hash() == a.hash()
    assert loads_config(b.dumps(), str(tmp_path)).dumps() == a.dumps()


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda d: d["sensor"].pop("p_fn"), "sensor.p_fn"),
        (lambda d: d["sensor"].pop("sigma_deg"), "sensor.sigma"),
        (lambda d: d["sensor"].update(sigma_rad=0.1), "sigma"),
        (lambda d: d["sensor"].update(p_fn="high"), "sensor.p_fn"),
        (lambda d: d["sensor"].update(theta_c_pi=0.9), "theta_c"),
        (lambda d: d.update(world={"n_scans": -1}), "world.n_scans"),
        (lambda d: d.update(world={"targets_m": [[1]]}), "world.targets_m"),
        (lambda d: d.update(filter={"survival_prob": 2}), "filter.survival_prob"),
        (lambda d: d.update(calibration={"sigma_method": "eyeball"}), "calibration.sigma_method"),
        (lambda d: d.update(calibration={"p_fn_grid": [1, 0, 0.1]}), "calibration.p_fn_grid"),
    ],
)
def test_errors_name_the_field(mutate, field):
    d = _cfg()
    mutate(d)
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        config_from_dict(d, check_files=False)


def test_missing_map_file(tmp_path):
    d = _cfg(world={"map": "nope.map"})
    (tmp_path / "c.json").write_text(json.dumps(d))
    with pytest.raises(ConfigError, match="world.map"):
        load_config(tmp_path / "c.json")


def test_bad_json(tmp_path):
    (tmp_path / "c.json").write_text("{")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_parse_quantity():
    assert parse_quantity("2.25deg") == pytest.approx(math.radians(2.25))
    assert parse_quantity("0.2pi") == pytest.approx(0.2 * math.pi)
    assert parse_quantity("0.04rad") == 0.04
    assert parse_quantity("1.28in", "length") == pytest.approx(0.032512)
    for bad in ("2.25", "2.25 degrees", "deg"):
        with pytest.raises(ConfigError):
            parse_quantity(bad)
