import json

import pytest

from igrsr.config import ConfigError, ModelConfig, TrainConfig, config_from_dict, load_config


def test_defaults_and_ranges():
    m = ModelConfig()
    assert (m.prefix_tokens, m.intent_tokens, m.intent_dim, m.hidden_dim) == (8, 3, 16, 64)
    for bad in (dict(prefix_tokens=1), dict(prefix_tokens=33), dict(intent_tokens=0), dict(intent_tokens=6), dict(intent_dim=12)):
        with pytest.raises(ConfigError):
            ModelConfig(**bad)
    assert ModelConfig(prefix_tokens=0, ablation_mode=True).prefix_tokens == 0
    with pytest.raises(ConfigError):
        TrainConfig(lambda_icr=-0.1)
    with pytest.raises(ConfigError):
        TrainConfig(patience=0)


def test_toml_and_json_agree(tmp_path):
    (tmp_path / "c.toml").write_text("seeds = [4]\n[model]\nhidden_dim = 32\n[train]\nlambda_icr = 0.5\n")
    (tmp_path / "c.json").write_text(json.dumps({"seeds": [4], "model": {"hidden_dim": 32}, "train": {"lambda_icr": 0.5}}))
    a, b = load_config(tmp_path / "c.toml"), load_config(tmp_path / "c.json")
    assert a == b and a.fingerprint() == b.fingerprint()
    assert a.model.hidden_dim == 32 and a.seeds == (4,)


def test_unknown_keys_and_bad_files(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"model": {"hiden_dim": 3}})
    (tmp_path / "bad.toml").write_text("[model\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.toml")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_fingerprint_tracks_content():
    a = config_from_dict({})
    assert a.fingerprint() == config_from_dict({}).fingerprint()
    assert a.fingerprint() != config_from_dict({"train": {"seed": 1}}).fingerprint()
    assert a.with_seed(7).seeds == (7,)
