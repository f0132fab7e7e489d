import pytest

from ramanfuse.config import SCHEMA, load_config, preprocess_config, write_default_config
from ramanfuse.errors import ConfigError


def test_defaults():
    cfg = load_config()
    assert cfg.seed == 0
    assert cfg["models"]["early_hidden"] == (256, 64)
    assert cfg["models"]["rf_max_depth"] is None
    assert cfg["dataset"]["tasks"] == ("polyp_vs_control", "crc_vs_control")
    assert preprocess_config(cfg).phe_window == (995.0, 1010.0)


def test_file_then_overrides(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[run]\nseed = 4\n[models]\nlr = 0.01\n")
    cfg = load_config(p, ["run.seed=9"])
    assert cfg.seed == 9 and cfg["models"]["lr"] == 0.01


@pytest.mark.parametrize("text", ["[models]\nwidth = 3\n", "[nosuch]\nx = 1\n"])
def test_unknown_keys_rejected(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    with pytest.raises(ConfigError, match="unknown"):
        load_config(p)


@pytest.mark.parametrize("override", [
    "models.lr=abc", "models.lr=nan", "models.dropout=1.0", "dataset.tasks=foo", "dataset.balance=x",
    "models.variants=early, cnn", "synth.signal=loud", "dataset.folds=1", "explain.lime_perturbations=10",
    "preprocess.phe_window=1000", "noequals", "seed=3",
])
def test_invalid_values(override):
    with pytest.raises(ConfigError):
        load_config(overrides=[override])


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "absent.ini")


def test_hash_ignores_output_dir_and_jobs():
    a = load_config(overrides=["paths.output_dir=a", "run.jobs=1"])
    b = load_config(overrides=["paths.output_dir=b", "run.jobs=3"])
    c = load_config(overrides=["run.seed=1"])
    assert a.hash() == b.hash() != c.hash()


def test_default_file_round_trip(tmp_path):
    p = tmp_path / "d.ini"
    write_default_config(p)
    assert load_config(p).values == load_config().values
    text = p.read_text()
    for section, keys in SCHEMA.items():
        assert f"[{section}]" in text
        for k in keys:
            assert f"\n{k} = " in text
