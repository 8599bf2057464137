import pytest

from fedcontrast.config import (
    ExperimentConfig,
    echo_config,
    parse_config,
    write_config,
)
from fedcontrast.errors import ConfigError


def test_defaults_follow_the_parameter_table():
    cfg = parse_config()
    assert cfg.K == 100
    assert cfg.B == 10
    assert cfg.R_L == 1
    assert cfg.BS_L == 10
    assert cfg.BS_U == 50
    assert cfg.BS_test == 128
    assert cfg.gamma in (0.01, 0.1)
    assert cfg.R_G == 200  # non-SVHN default
    assert cfg.tau == 0.999 and cfg.mu == 0.999
    assert cfg.augmentation == "weak"
    assert cfg.dropout is True


def test_empty_file_yields_defaults(tmp_path):
    path = tmp_path / "empty.conf"
    path.write_text("# nothing but comments\n\n")
    assert parse_config(path) == parse_config()


def test_svhn_round_default():
    assert parse_config(overrides={"dataset": "svhn", "data_dir": "x"}).R_G == 150


def test_bsu_coupling_follows_bsl():
    cfg = parse_config(overrides={"BS_L": "20"})
    assert cfg.BS_U == 100
    cfg = parse_config(overrides={"BS_L": "20", "BS_U": "30"})
    assert cfg.BS_U == 30


def test_lr_default_depends_on_dataset():
    assert parse_config().lr == 0.01
    assert parse_config(overrides={"dataset": "cifar10", "data_dir": "x"}).lr == 0.03


def test_override_wins_over_file(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("gamma = 0.1\nK = 40\n")
    cfg = parse_config(path, overrides=["gamma=0.05"])
    assert cfg.gamma == 0.05
    assert cfg.K == 40


def test_unknown_key_lists_valid_ones(tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text("gammma = 0.1\n")
    with pytest.raises(ConfigError, match="valid keys"):
        parse_config(path)
    with pytest.raises(ConfigError, match="valid keys"):
        parse_config(overrides=["nope=1"])


def test_syntax_and_type_errors(tmp_path):
    path = tmp_path / "bad.conf"
    path.write_text("gamma 0.1\n")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config(path)
    path.write_text("K = many\n")
    with pytest.raises(ConfigError, match="integer"):
        parse_config(path)
    path.write_text("dropout = maybe\n")
    with pytest.raises(ConfigError, match="boolean"):
        parse_config(path)


def test_missing_file_raises():
    with pytest.raises(ConfigError, match="not found"):
        parse_config("/nonexistent/path.conf")


def test_invariant_violations():
    with pytest.raises(ConfigError):
        parse_config(overrides={"gamma": "0.0"})
    with pytest.raises(ConfigError):
        parse_config(overrides={"gamma": "0.6", "beta": "0.5"})
    with pytest.raises(ConfigError):
        parse_config(overrides={"B": "101"})
    with pytest.raises(ConfigError):
        parse_config(overrides={"tau": "1.0"})
    with pytest.raises(ConfigError):
        parse_config(overrides={"augmentation": "mild"})
    with pytest.raises(ConfigError):
        parse_config(overrides={"regime": "dirichlet"})


def test_config_round_trips_through_echo(tmp_path):
    cfg = parse_config(overrides={
        "dataset": "mnist", "gamma": "0.1", "beta": "0.05", "K": "17",
        "B": "3", "tau": "0.996", "normalize_projection": "true",
        "train_subset": "500"})
    path = tmp_path / "echo.conf"
    write_config(cfg, path)
    assert parse_config(path) == cfg


def test_echo_is_complete():
    text = echo_config(parse_config())
    field_names = {line.split(" = ")[0] for line in text.strip().splitlines()}
    import dataclasses

    assert field_names == {f.name for f in dataclasses.fields(ExperimentConfig)}


def test_set_pairs_parsing():
    cfg = parse_config(overrides=["seed=7", "eval_every=5"])
    assert cfg.seed == 7 and cfg.eval_every == 5
    with pytest.raises(ConfigError, match="key=value"):
        parse_config(overrides=["seed:7"])
