#!/usr/bin/env python3
"""
Configuration tests: defaults, merging, validation, presets, export/import and hashing
"""

import json
from pathlib import Path

import pytest

from config import MODEL_PRESETS, TRAINING_PRESETS, ConfigError, ConfigManager
from transcad_model import ModelConfig
from utils import canonical_json, derive_seed, safe_divide, sha256_bytes


@pytest.fixture
def manager():
    return ConfigManager(None)


def test_defaults_are_valid(manager):
    assert manager.load_config()
    assert manager.validate_config() == []
    assert manager.get_setting("scoring.thresholds")[0] == 0.05
    assert len(manager.get_setting("scoring.thresholds")) == 19
    assert manager.get_setting("holes.min_remaining") == 4096


def test_shipped_config_matches_defaults():
    shipped = ConfigManager(str(Path(__file__).resolve().parent / "config.json"))
    shipped.load_config()
    assert shipped.get_config() == ConfigManager(None).get_config()


def test_file_overrides_merge_into_defaults(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"scoring": {"k": 2.0}, "seed": 9}), encoding="utf-8")
    manager = ConfigManager(str(path))
    manager.load_config()
    assert manager.get_setting("scoring.k") == 2.0
    assert manager.get_setting("scoring.eta") == 3
    assert manager.get_setting("seed") == 9


def test_bad_files_raise(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError):
        ConfigManager(str(path)).load_config()
    path.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        ConfigManager(str(path)).load_config()


def test_dotted_access(manager):
    assert manager.get_setting("no.such.key", "fallback") == "fallback"
    manager.update_config("model.overrides.d_z", 64)
    assert manager.get_model_settings()["d_z"] == 64
    manager.reset_to_defaults()
    assert manager.get_model_settings()["d_z"] == MODEL_PRESETS["toy"]["d_z"]


@pytest.mark.parametrize("key,value", [
    ("scoring.k", 0),
    ("scoring.thresholds", [0.5, 0.4]),
    ("geometry.delta_csg", 0.5),
    ("noise.amplitude", -1.0),
    ("holes.max_holes", 0),
    ("model.preset", "huge"),
    ("model.overrides", {"heads": 5}),
    ("cli.split", {"train": 0.5, "test": 0.1}),
    ("logging.log_level", "LOUD"),
    ("cli.complexity_bins", -1),
    ("geometry.duplicate_threshold", -1.0),
])
def test_validation_errors(manager, key, value):
    manager.update_config(key, value)
    assert manager.validate_config()


def test_presets_build_model_configs(manager):
    for name in MODEL_PRESETS:
        manager.update_config("model.preset", name)
        assert ModelConfig.from_dict(manager.get_model_settings()) == ModelConfig.from_preset(name)
        assert manager.get_training_settings() == TRAINING_PRESETS[name]


def test_export_import_round_trip(manager, tmp_path):
    manager.update_config("seed", 42)
    out = tmp_path / "exported.json"
    assert manager.export_config(str(out))
    other = ConfigManager(None)
    assert other.import_config(str(out))
    assert other.get_setting("seed") == 42
    assert other.config_hash() == manager.config_hash()


def test_invalid_import_keeps_previous(manager, tmp_path):
    out = tmp_path / "bad.json"
    out.write_text(json.dumps({"scoring": {"k": -3}}), encoding="utf-8")
    before = manager.config_hash()
    assert not manager.import_config(str(out))
    assert manager.config_hash() == before


def test_hash_tracks_content(manager):
    before = manager.config_hash()
    assert before == sha256_bytes(canonical_json(manager.get_config()).encode("utf-8"))
    manager.update_config("noise.octaves", 8)
    assert manager.config_hash() != before


def test_seed_helpers():
    assert derive_seed(0, 1) == derive_seed(0, 1)
    assert derive_seed(0, 1) != derive_seed(0, 2)
    assert derive_seed(3, 0) >= 0
    assert safe_divide(1.0, 0.0, default=-1.0) == -1.0


def test_save_then_reload(tmp_path):
    path = tmp_path / "saved.json"
    manager = ConfigManager(str(path))
    manager.update_config("noise.octaves", 6)
    assert manager.save_config()
    reloaded = ConfigManager(str(path))
    reloaded.load_config()
    assert reloaded.get_setting("noise.octaves") == 6
