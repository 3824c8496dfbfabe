from pathlib import Path

import pytest

from sketchebm.config import RunConfig, fingerprint, from_dict, load_config, parse_override
from sketchebm.errors import ConfigurationError

TOY = Path(__file__).resolve().parents[1] / "configs" / "toy.yaml"


def test_defaults():
    cfg = RunConfig()
    assert cfg.flow.blocks == 8 and cfg.flow.hidden == 256 and cfg.flow.s_max == 2.0
    assert cfg.train.lambda_energy == 2000 and cfg.train.nce_temperature == 0.1
    assert cfg.train.epochs == 5 and cfg.train.batch_size == 1 and cfg.train.lr == 5e-4
    assert cfg.stylemix.crossover_layer == 5 and cfg.stylemix.style_truncation == 0.5
    assert cfg.stylemix.content_truncation is None
    assert cfg.eval.n_samples == 2500 and cfg.eval.k == 3 and cfg.eval.resolution == 256


def test_parse_override():
    assert parse_override("train.lambda_energy=5000") == {"train": {"lambda_energy": 5000}}
    assert parse_override("paths.category=cat") == {"paths": {"category": "cat"}}
    assert parse_override("train.augment=true") == {"train": {"augment": True}}
    with pytest.raises(ConfigurationError):
        parse_override("novalue")


def test_load_toy_config_with_overrides():
    cfg = load_config(TOY, ["train.lambda_energy=5000", "seed=4"])
    assert cfg.train.lambda_energy == 5000 and cfg.train.augment
    assert cfg.seed == 4 and cfg.train.seed == 4


def test_unknown_keys_rejected():
    with pytest.raises(ConfigurationError, match="unknown"):
        from_dict({"train": {"lamda": 1}})
    with pytest.raises(ConfigurationError, match="unknown"):
        from_dict({"trian": {}})
    with pytest.raises(ConfigurationError):
        from_dict({"backends": {"vae": {"kind": "toy"}}})
    with pytest.raises(ConfigurationError):
        from_dict({"dtype": "float16"})
    with pytest.raises(ConfigurationError):
        from_dict({"stylemix": {"style_truncation": 2.0}})


def test_fingerprint_stable_and_sensitive():
    a, b = RunConfig(), RunConfig()
    assert a.fingerprint == b.fingerprint and len(a.fingerprint) == 16
    assert from_dict(a.to_dict()).fingerprint == a.fingerprint
    assert load_config(None, ["train.lr=0.001"]).fingerprint != a.fingerprint
    assert fingerprint({"b": 1, "a": 2}) == fingerprint({"a": 2, "b": 1})


def test_require_paths(tmp_path):
    cfg = RunConfig()
    with pytest.raises(ConfigurationError, match="paths.sketch"):
        cfg.require_paths("sketch")
    cfg = load_config(None, [f"paths.sketch={tmp_path / 'missing.png'}"])
    with pytest.raises(ConfigurationError, match="not found"):
        cfg.require_paths("sketch")
