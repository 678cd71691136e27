import math

import pytest

from motkit.config import (ConfigError, KEYS, build_run_config, describe_keys,
                           parse_config_file)


def test_defaults_are_toy_preset():
    cfg = build_run_config()
    assert cfg.backbone == "toy"
    assert cfg.network.exemplar_size == 31
    assert cfg.loss.lambda1 == 0.1 and cfg.loss.lambda2 == 0.1
    assert cfg.tracker.alpha == 0.6 and cfg.tracker.beta == 0.5 and cfg.tracker.gamma == 0.5
    assert cfg.tracker.terminate_after == 30
    assert cfg.train.batch_size == 8 and cfg.train.momentum == 0.9


def test_full_preset_switches_patch_sizes():
    cfg = build_run_config({"backbone": "full"})
    assert cfg.network.exemplar_size == 127
    assert cfg.network.instance_size_train == 239
    assert cfg.network.instance_size_track == 255
    assert cfg.network.num_identities == 439
    assert cfg.loss.label_radius == 16.0


def test_cli_values_override_file_values():
    cfg = build_run_config({"alpha": "0.4", "seed": "3"}, {"alpha": "0.7"})
    assert cfg.tracker.alpha == 0.7
    assert cfg.seed == 3
    assert cfg.was_set("alpha") and not cfg.was_set("beta")


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        build_run_config({"bogus": "1"})


def test_alpha_accepts_infinity():
    cfg = build_run_config({"alpha": "inf"})
    assert cfg.tracker.alpha == math.inf


def test_bad_value_names_the_key():
    with pytest.raises(ConfigError, match="epochs"):
        build_run_config({"epochs": "many"})


def test_parse_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nalpha = 0.55\n\nseed=4\n")
    assert parse_config_file(p) == {"alpha": "0.55", "seed": "4"}


def test_parse_config_file_reports_line(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("alpha = 0.5\nnot a pair\n")
    with pytest.raises(ConfigError, match=":2"):
        parse_config_file(p)


def test_describe_keys_mentions_every_key_and_defaults():
    text = describe_keys()
    for key in KEYS:
        assert key in text
    assert "0.6" in text   # alpha default
    assert "30" in text    # termination default
