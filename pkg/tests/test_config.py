import numpy as np
import pytest

from quadtarget.config import (
    SHIPPED,
    ConfigFile,
    dump_config,
    load_config,
    parse_config,
    resolve_config,
    shipped_config_path,
)
from quadtarget.eer import EXP_Q1, SIM_Q1
from quadtarget.errors import ConfigurationError


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_round_trip(name):
    cfg = load_config(shipped_config_path(name))
    again = parse_config(dump_config(cfg))
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_configs_build_scenarios(name):
    sc = resolve_config(name).to_scenario()
    assert sc.name == name
    assert sc.n_steps > 0


def test_shipped_gain_sets():
    assert resolve_config("sim-case1").eer.q1 == SIM_Q1
    assert resolve_config("exp-case2").eer.q1 == EXP_Q1
    assert resolve_config("exp-case2").cost.k1 == 2.5
    assert resolve_config("sim-case2").target.kind == "case2"


def test_missing_keys_take_defaults():
    cfg = parse_config("scenario:\n  duration_s: 5.0\n")
    assert cfg.scenario.duration_s == 5.0
    assert cfg.gpm.nodes == 7
    assert parse_config("") == ConfigFile()


def test_unknown_key_rejected_with_line():
    text = "scenario:\n  duration_s: 5.0\n  bogus_key: 1\n"
    with pytest.raises(ConfigurationError) as info:
        parse_config(text, "cfg.yaml")
    err = info.value
    assert err.line == 3 and err.key == "scenario.bogus_key"
    assert "cfg.yaml" in str(err) and "bogus_key" in str(err)


def test_negative_duration_names_key():
    with pytest.raises(ConfigurationError) as info:
        parse_config("target:\n  kind: case1\nscenario:\n  duration_s: -1\n")
    assert info.value.key == "scenario.duration_s"
    assert info.value.line == 4


def test_cross_field_error_located():
    with pytest.raises(ConfigurationError) as info:
        parse_config("scenario:\n  control_period_s: 0.0205\n")
    assert info.value.key == "scenario.control_period_s"
    assert info.value.line == 2


@pytest.mark.parametrize("text", ["scenario: [1, 2\n", "- a\n- b\n", "plant:\n  drag_per_s: [0.1, -1, 0]\n",
                                  "limits:\n  pitch_rad: .nan\n"])
def test_malformed(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "nope.yaml")
    with pytest.raises(ConfigurationError):
        shipped_config_path("sim-case9")


def test_to_scenario_wiring():
    cfg = parse_config("lateral:\n  kp_per_s2: 4.0\ncost:\n  k1: 7.0\ngpm:\n  time_budget_s: 0.08\n"
                       "bvp:\n  thrust_offset: false\n")
    sc = cfg.to_scenario("bvp")
    assert sc.controller == "bvp"
    assert sc.eer.kp == 4.0 and sc.gpm.kp == 4.0 and sc.bvp.kp == 4.0
    assert sc.gpm.weights.k1 == 7.0 and sc.bvp.weights.k1 == 7.0
    assert sc.gpm.nlp.time_budget == 0.08
    assert sc.bvp.thrust_ref == 0.0
    np.testing.assert_allclose(sc.quad_position, (-10.0, 0.0, 0.61))
