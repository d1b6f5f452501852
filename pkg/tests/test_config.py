import math

import pytest

from swirlshock.harness.config import (ConfigError, ConfigParseError, ConfigValidationError,
                                       config_from_dict, default_config, load_config,
                                       parse_toml, shape_polynomial)


def test_minimal_config_uses_defaults():
    cfg = config_from_dict({})
    assert cfg.gas.gamma == 1.4
    assert cfg.geometry.theta0 == pytest.approx(math.pi / 6)
    assert cfg.straight_wall and cfg.n1 == 64


def test_shipped_default_file_matches_builtin():
    cfg = load_config("configs/default.toml")
    ref = default_config()
    assert cfg.exit_pressure == ref.exit_pressure and cfg.epsilon == ref.epsilon
    for k in ref.profiles:
        assert (cfg.profiles[k].coef == ref.profiles[k].coef).all(), k


def test_bad_opening_angle():
    with pytest.raises(ConfigValidationError, match="theta0"):
        config_from_dict({"geometry": {"theta0": 2.0}})


def test_exit_pressure_out_of_range_quotes_range():
    with pytest.raises(ConfigValidationError) as info:
        config_from_dict({"geometry": {"exit_pressure": 5.0}})
    msg = str(info.value)
    assert "1.0405052395" in msg and "3.98856340027" in msg


def test_all_failures_reported_together():
    with pytest.raises(ConfigValidationError) as info:
        config_from_dict({"gas": {"gamma": 0.9}, "numerics": {"n1": 3}, "bogus": {}})
    assert len(info.value.failures) >= 3


def test_parse_error_has_line():
    with pytest.raises(ConfigParseError) as info:
        parse_toml("[gas]\ngamma = 1.4\nA = = 2\n")
    assert info.value.line == 3 and "line 3" in str(info.value)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/case.toml")


def test_shapes_compatible():
    t0 = math.pi / 6
    even, odd, swirl = (shape_polynomial(s, t0) for s in ("even", "odd", "swirl"))
    assert even.deriv()(0.0) == 0.0 and abs(even.deriv()(t0)) < 1e-14
    assert odd(0.0) == 0.0 and odd.deriv(2)(0.0) == 0.0
    assert abs(swirl(t0)) < 1e-14 and abs(swirl.deriv()(t0)) < 1e-13
    with pytest.raises(ConfigError):
        shape_polynomial("square", t0)


def test_with_updates_revalidates():
    cfg = default_config()
    assert cfg.with_updates(numerics={"n1": 32}).n1 == 32
    with pytest.raises(ConfigError):
        cfg.with_updates(perturbation={"epsilon": -1.0})
