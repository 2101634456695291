import math

import pytest

from hfgyro.config import ConfigError, build_config, load_config, parse_config, sweep_points, with_override

MINIMAL = """
schema: 1
scenario:
  B: "50 G"
  omega: "2pi*100 Hz"
  duration: "5 ms"
"""


def test_minimal_config():
    cfg = parse_config(MINIMAL)
    s = cfg.scenario
    assert s.field.B == 50.0
    assert math.isclose(s.omega, 2 * math.pi * 100)
    assert s.duration == 5e-3
    assert s.initial_state == (0, 0.5)
    assert cfg.sweep == () and cfg.fit is None and cfg.sensitivity is None


def test_full_sections():
    cfg = parse_config(
        MINIMAL
        + """  T1e: "5 ms"
  dt: "20 ns"
  initial_state: {ms: 0, mI: -0.5}
params:
  A_perp: "2pi*3.65 MHz"
noise:
  sigma_Bz: "0.1 G"
  samples: 10
sensitivity:
  C: 0.02
  tau: "7.5 ms"
fit:
  model: stretched_exp_cos
  observable: S_z
"""
    )
    assert cfg.scenario.T1e == 5e-3 and math.isclose(cfg.scenario.dt, 2e-8)
    assert cfg.scenario.initial_state == (0, -0.5)
    assert cfg.scenario.noise.samples == 10
    assert cfg.sensitivity.tau == 7.5e-3
    assert cfg.fit.model == "stretched_exp_cos"


@pytest.mark.parametrize(
    "text,key",
    [
        (MINIMAL.replace('"50 G"', '"50 Gauss"'), "scenario.B"),
        (MINIMAL.replace('"5 ms"', "5"), "scenario.duration"),
        (MINIMAL + "  bogus: 1\n", "scenario.bogus"),
        (MINIMAL.replace("schema: 1", "schema: 2"), "schema"),
        (MINIMAL + "fit:\n  model: cubic\n", "fit.model"),
        (MINIMAL + '  T1e: "1 us"\n  dt: "1 us"\n', "scenario.dt"),
    ],
)
def test_errors_name_the_key(text, key):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.key == key
    assert key in str(err.value)


def test_missing_scenario():
    with pytest.raises(ConfigError):
        build_config({"schema": 1})


def test_yaml_syntax_error_location():
    with pytest.raises(ConfigError) as err:
        parse_config("schema: 1\nscenario:\n  B: [50 G\n")
    assert err.value.line is not None and err.value.column is not None
    assert "line" in str(err.value)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")


def test_with_override_is_a_copy():
    raw = parse_config(MINIMAL).raw
    new = with_override(raw, "scenario.T1e", "2 ms")
    assert new["scenario"]["T1e"] == "2 ms"
    assert "T1e" not in raw["scenario"]


def test_one_dimensional_sweep():
    cfg = parse_config(MINIMAL + 'sweep:\n  key: scenario.T1e\n  values: ["1 ms", "2 ms"]\n')
    pts = list(sweep_points(cfg))
    assert [p[0]["scenario.T1e"] for p in pts] == ["1 ms", "2 ms"]
    assert [p[1].scenario.T1e for p in pts] == [1e-3, 2e-3]


def test_two_dimensional_range_sweep_row_major():
    cfg = parse_config(
        MINIMAL
        + """sweep:
  axes:
    - {key: scenario.B, values: ["10 G", "20 G"]}
    - {key: scenario.omega, start: "2pi*10 Hz", stop: "2pi*1000 Hz", num: 3, log: true}
"""
    )
    pts = list(sweep_points(cfg))
    assert len(pts) == 6
    assert [p[1].scenario.field.B for p in pts] == [10, 10, 10, 20, 20, 20]
    w = [p[1].scenario.omega / (2 * math.pi) for p in pts[:3]]
    assert all(math.isclose(a, b) for a, b in zip(w, [10, 100, 1000]))


def test_empty_sweep_rejected():
    with pytest.raises(ConfigError) as err:
        parse_config(MINIMAL + "sweep:\n  key: scenario.T1e\n  values: []\n")
    assert "empty" in str(err.value)


def test_sweep_points_requires_sweep():
    with pytest.raises(ConfigError):
        list(sweep_points(parse_config(MINIMAL)))
