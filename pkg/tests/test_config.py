import io

import pytest

from cutter.config import ConfigError, RunConfig, build_config, parse_overrides, read_config_file


def test_defaults_valid():
    cfg = RunConfig()
    assert cfg.rho == 0.5 and cfg.gamma == 0.99 and cfg.buffer_size == 200


@pytest.mark.parametrize("field,value", [("rho", 0.0), ("rho", 2.0), ("gamma", 1.5), ("width", 0), ("w_conn", 0.9)])
def test_invalid_values(field, value):
    with pytest.raises(ConfigError, match=field):
        RunConfig(**{field: value})


def test_error_names_value():
    with pytest.raises(ConfigError, match="2.0"):
        RunConfig(rho=2.0)


def test_dump_round_trip():
    cfg = RunConfig(seed=7, rho=0.3, shaping=False, lambda_proto=0.25)
    back = build_config(read_config_file(io.StringIO(cfg.dump())))
    assert back == cfg


def test_file_with_comments():
    text = "# run\nseed = 3  # inline\n\nrho=0.7\n"
    assert build_config(read_config_file(io.StringIO(text))) == RunConfig(seed=3, rho=0.7)


def test_overrides_win():
    assert build_config({"seed": "1"}, {"seed": "2"}).seed == 2


def test_bool_spellings():
    assert parse_overrides({"shaping": "off"}) == {"shaping": False}
    assert parse_overrides({"shaping": "Yes"}) == {"shaping": True}
    with pytest.raises(ConfigError):
        parse_overrides({"shaping": "maybe"})


def test_unknown_key():
    with pytest.raises(ConfigError, match="nonsense"):
        parse_overrides({"nonsense": "1"})


def test_bad_number():
    with pytest.raises(ConfigError, match="episodes"):
        parse_overrides({"episodes": "ten"})


def test_malformed_line():
    with pytest.raises(ConfigError, match="line 2"):
        read_config_file(io.StringIO("seed = 1\nrho\n"))
