import pytest

from fctl.config import ConfigError, build_config, parse_text, resolve, to_text
from fctl.degrade import Kind
from fctl.train import TrainConfig


def test_defaults():
    assert resolve() == TrainConfig()


def test_parse_with_comments():
    vals = parse_text("# run\nepochs = 3\n\nkind=rain  # streaks\nintensity = 0.25\nr0 = 2\n")
    assert vals == {"epochs": 3, "kind": "rain", "intensity": 0.25, "r0": 2}
    cfg = build_config(vals)
    assert cfg.epochs == 3 and cfg.degrade.kind is Kind.RAIN and cfg.degrade.intensity == 0.25
    assert cfg.eansdl.r0 == 2


def test_unknown_key_named():
    with pytest.raises(ConfigError, match="learning_rate"):
        parse_text("learning_rate = 0.1\n")
    with pytest.raises(ConfigError, match="bogus"):
        build_config({"bogus": 1})


def test_bad_lines():
    with pytest.raises(ConfigError, match=":2:"):
        parse_text("epochs = 1\nepochs 2\n")
    with pytest.raises(ConfigError, match="epochs"):
        parse_text("epochs = many\n")
    with pytest.raises(ConfigError):
        build_config({"kind": "snow"})
    with pytest.raises(ConfigError):
        build_config({"intensity": 2.0})


def test_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("epochs = 5\nlr = 0.1\n")
    cfg = resolve(path, {"lr": 0.2, "epochs": None})
    assert cfg.epochs == 5 and cfg.lr == 0.2
    assert cfg.batch_size == TrainConfig().batch_size


def test_lambda_fs_kept_in_sync():
    cfg = build_config({"lambda_fs": 0.5})
    assert cfg.lambda_fs == 0.5 and cfg.eansdl.lambda_fs == 0.5


def test_text_roundtrip(tmp_path):
    cfg = build_config({"epochs": 7, "kind": "dark", "intensity": 0.3, "alpha": 2.5, "seed": 11})
    path = tmp_path / "c.cfg"
    path.write_text(to_text(cfg))
    assert resolve(path) == cfg
