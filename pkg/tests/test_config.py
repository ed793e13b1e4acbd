import pytest

from mafnet import toml_io
from mafnet.config import (
    default_run_config,
    load_run_config,
    read_run_config,
    write_run_config,
)
from mafnet.errors import UsageError


def test_toml_round_trip():
    payload = {
        "top": 3,
        "data": {"crop_size": 224, "name": "run-1", "flag": True, "off": False},
        "train": {"lr": 4e-4, "epochs": 10, "layers": [0, 4, 8], "ratio": 0.5},
    }
    text = toml_io.dumps(payload)
    assert toml_io.loads(text) == payload


def test_toml_parses_comments_and_blanks():
    text = """
# a comment
seed = 3   # trailing comment

[train]
lr = 1e-3
name = "x # not a comment"
"""
    parsed = toml_io.loads(text)
    assert parsed["seed"] == 3
    assert parsed["train"]["lr"] == 1e-3
    assert parsed["train"]["name"] == "x # not a comment"


def test_toml_errors():
    with pytest.raises(toml_io.TomlError):
        toml_io.loads("key")
    with pytest.raises(toml_io.TomlError):
        toml_io.loads("arr = [1, 2")
    with pytest.raises(toml_io.TomlError):
        toml_io.loads("a = 1\na = 2")
    with pytest.raises(toml_io.TomlError):
        toml_io.loads("[bad name]\n")
    with pytest.raises(toml_io.TomlError):
        toml_io.loads("v = what")


def test_toml_float_round_trip_is_exact():
    text = toml_io.dumps({"t": {"lr": 4e-4, "tau": 0.07}})
    parsed = toml_io.loads(text)
    assert parsed["t"]["lr"] == 4e-4
    assert parsed["t"]["tau"] == 0.07


def test_run_config_defaults_full_scale():
    cfg = default_run_config()
    assert cfg.crop_size == 224
    assert cfg.train.epochs_synthesis == 10
    assert cfg.train.epochs_joint == 100
    assert cfg.train.generator.base_width == 64
    assert cfg.train.num_patches == 256
    assert (cfg.train.lr_g, cfg.train.lr_h, cfg.train.lr_d, cfg.train.lr_seg) == (
        4e-4,
        4e-4,
        2e-4,
        1e-4,
    )
    assert cfg.train.weights.tau == 0.07
    assert cfg.train.weights.lam == 1e-3


def test_run_config_desk_profile():
    cfg = default_run_config(desk_scale=True)
    assert cfg.train.generator.base_width == 16
    assert cfg.train.epochs_synthesis == 2
    assert cfg.train.epochs_joint == 3
    assert cfg.train.num_patches == 32


def test_overlay_overrides_and_echo_round_trip(tmp_path):
    user = tmp_path / "user.toml"
    user.write_text(
        """
[data]
crop_size = 32

[train]
batch_size = 2
epochs_joint = 1

[generator]
base_width = 4
"""
    )
    cfg = load_run_config(user, desk_scale=True)
    assert cfg.crop_size == 32
    assert cfg.train.batch_size == 2
    assert cfg.train.epochs_joint == 1
    assert cfg.train.epochs_synthesis == 2  # untouched desk default
    assert cfg.train.generator.base_width == 4

    echo = tmp_path / "resolved.toml"
    write_run_config(cfg, echo)
    again = read_run_config(echo)
    assert again == cfg


def test_overlay_rejects_unknown_keys(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[train]\nlearning_rate = 1.0\n")
    with pytest.raises(UsageError):
        load_run_config(bad)
    bad.write_text("[optimizer]\nlr = 1.0\n")
    with pytest.raises(UsageError):
        load_run_config(bad)
    bad.write_text("stray = 1\n")
    with pytest.raises(UsageError):
        load_run_config(bad)


def test_use_identity_flip_rederives_lambdas(tmp_path):
    user = tmp_path / "user.toml"
    user.write_text("[weights]\nuse_identity = false\n")
    cfg = load_run_config(user)
    assert (cfg.train.weights.lambda_x, cfg.train.weights.lambda_y) == (10.0, 0.0)

    user.write_text("[weights]\nuse_identity = false\nlambda_x = 5.0\n")
    cfg = load_run_config(user)
    assert (cfg.train.weights.lambda_x, cfg.train.weights.lambda_y) == (5.0, 0.0)
