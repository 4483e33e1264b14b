"""
CAD Sequence Toolkit - Configuration Manager
Handles loading, merging, validating and exporting the run configuration
"""

import copy
import json
import os
from typing import Any, Dict, List, Optional

from utils import logger, canonical_json, sha256_bytes

# Model presets. "toy" is the desk-scale default; "paper" keeps the full-scale widths and schedule.
MODEL_PRESETS: Dict[str, Dict[str, Any]] = {
    "toy": {
        "n_points": 512,
        "d_p": 16,
        "d_z": 32,
        "heads": 4,
        "ff_dim": 64,
        "dropout": 0.0,
        "l_max": 24,
        "n_p_max": 8,
        "bins": 256,
        "decoder_blocks": 4,
        "loop_decoder_blocks": 4,
        "refiner_layers": 4,
        "encoder_points": [128, 64, 32, 16],
        "encoder_radius": [0.1, 0.2, 0.4, 0.8],
        "encoder_samples": [64, 64, 64, 32],
        "encoder_mlp_width": 32,
        "use_refiner": True,
        "hierarchical": True,
        "zero_init_heads": False,
    },
    "paper": {
        "n_points": 4096,
        "d_p": 16,
        "d_z": 256,
        "heads": 8,
        "ff_dim": 512,
        "dropout": 0.1,
        "l_max": 24,
        "n_p_max": 8,
        "bins": 256,
        "decoder_blocks": 4,
        "loop_decoder_blocks": 4,
        "refiner_layers": 4,
        "encoder_points": [512, 256, 128, 16],
        "encoder_radius": [0.1, 0.2, 0.4, 0.8],
        "encoder_samples": [64, 64, 64, 32],
        "encoder_mlp_width": 128,
        "use_refiner": True,
        "hierarchical": True,
        "zero_init_heads": False,
    },
}

TRAINING_PRESETS: Dict[str, Dict[str, Any]] = {
    "toy": {"batch_size": 8, "learning_rate": 0.001, "warmup_steps": 100, "steps": 2000,
            "checkpoint_every": 500},
    "paper": {"batch_size": 72, "learning_rate": 0.001, "warmup_steps": 2000, "steps": 200000,
              "checkpoint_every": 10000},
}

VALID_LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


class ConfigError(Exception):
    """Invalid configuration file or value"""


class ConfigManager:
    """Configuration management class"""

    def __init__(self, config_file: Optional[str] = "config.json"):
        """Initialize configuration manager"""
        self.config_file = config_file
        self.config = self._get_default_config()

    def _get_default_config(self) -> Dict[str, Any]:
        """Get default configuration"""
        return {
            "version": "1.0",
            "seed": 0,

            # Logging
            "logging": {
                "log_level": os.getenv("CADSEQ_LOG_LEVEL", "INFO"),
                "log_to_file": False,
                "log_dir": os.getenv("CADSEQ_LOG_DIR", "logs"),
                "log_timezone": "UTC",
            },

            # Surface sampling and CSG
            "geometry": {
                "n_points": 4096,
                "oversample": 8,
                "delta_csg": 1e-4,
                "arc_segments": 64,
                "normal_k": 30,
                "duplicate_threshold": 3e-4,
            },

            # CSSS / APCS / ACC
            "scoring": {
                "k": 1.0,
                "thresholds": [round(0.05 * i, 2) for i in range(1, 20)],
                "eta": 3,
                "categorical_gate": False,
            },

            "noise": {"octaves": 64, "amplitude": 0.001, "persistence": 0.5, "lacunarity": 2.0},

            "holes": {
                "max_holes": 10,
                "ratio_mean": 0.03,
                "ratio_std": 0.015,
                "min_remaining": 4096,
                "knn": 8,
            },

            "generator": {
                "min_steps": 1,
                "max_steps": 2,
                "min_loops": 1,
                "max_loops": 2,
                "min_primitives": 3,
                "max_primitives": 6,
                "max_retries": 100,
            },

            # Network: preset name plus per-key overrides
            "model": {"preset": "toy", "overrides": {}},

            "training": {"overrides": {}, "init_checkpoint": None},

            "cli": {
                "jobs": 1,
                "split": {"train": 0.8, "val": 0.1, "test": 0.1},
                "complexity_bins": 0,
                "length_bins": 0,
            },
        }

    def load_config(self) -> bool:
        """Load configuration from file; a missing file keeps the defaults"""
        if not self.config_file or not os.path.exists(self.config_file):
            logger(f"ℹ️ Config file {self.config_file} not found, using defaults", "DEBUG")
            return True
        try:
            with open(self.config_file, 'r', encoding='utf-8') as f:
                loaded_config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON in config file {self.config_file}: {str(e)}") from e

        if not isinstance(loaded_config, dict):
            raise ConfigError(f"Config file {self.config_file} must hold a JSON object")

        self._merge_config(loaded_config)
        logger(f"✅ Configuration loaded from {self.config_file}", "DEBUG")
        return True

    def save_config(self) -> bool:
        """Save configuration to file"""
        try:
            with open(self.config_file, 'w', encoding='utf-8') as f:
                json.dump(self.config, f, indent=4, sort_keys=True)
            logger(f"✅ Configuration saved to {self.config_file}")
            return True
        except OSError as e:
            logger(f"❌ Error saving config: {str(e)}", "ERROR")
            return False

    def _merge_config(self, loaded_config: Dict[str, Any]) -> None:
        """Merge loaded config with defaults"""
        def merge_dict(default: Dict, loaded: Dict) -> Dict:
            """Recursively merge dictionaries"""
            result = copy.deepcopy(default)
            for key, value in loaded.items():
                if key in result and isinstance(result[key], dict) and isinstance(value, dict):
                    result[key] = merge_dict(result[key], value)
                else:
                    result[key] = value
            return result

        self.config = merge_dict(self.config, loaded_config)

    def get_config(self) -> Dict[str, Any]:
        """Get current configuration"""
        return copy.deepcopy(self.config)

    def get_setting(self, key: str, default: Any = None) -> Any:
        """Get specific setting by dotted key"""
        try:
            value = self.config
            for k in key.split('.'):
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def update_config(self, key: str, value: Any) -> None:
        """Update configuration setting by dotted key"""
        keys = key.split('.')
        config = self.config
        for k in keys[:-1]:
            if not isinstance(config.get(k), dict):
                config[k] = {}
            config = config[k]
        config[keys[-1]] = value
        logger(f"✅ Config updated: {key} = {value}", "DEBUG")

    def reset_to_defaults(self) -> None:
        """Reset configuration to defaults"""
        logger("🔄 Resetting configuration to defaults...", "DEBUG")
        self.config = self._get_default_config()

    def validate_config(self) -> List[str]:
        """Validate configuration values; returns the list of problems (empty when valid)"""
        errors: List[str] = []
        cfg = self.config

        level = str(self.get_setting("logging.log_level", "INFO")).upper()
        if level not in VALID_LOG_LEVELS:
            errors.append(f"logging.log_level must be one of: {VALID_LOG_LEVELS}")

        if not 0 < float(self.get_setting("geometry.delta_csg", 1e-4)) < 1e-2:
            errors.append("geometry.delta_csg must be between 0 and 0.01")
        if int(self.get_setting("geometry.oversample", 8)) < 1:
            errors.append("geometry.oversample must be >= 1")
        if int(self.get_setting("geometry.n_points", 4096)) < 1:
            errors.append("geometry.n_points must be >= 1")

        if float(self.get_setting("scoring.k", 1.0)) <= 0:
            errors.append("scoring.k must be > 0")
        if float(self.get_setting("scoring.eta", 3)) < 0:
            errors.append("scoring.eta must be >= 0")
        thresholds = self.get_setting("scoring.thresholds", [])
        if not thresholds or any(not 0 < t < 1 for t in thresholds) \
                or any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            errors.append("scoring.thresholds must be strictly ascending values in (0, 1)")

        if float(self.get_setting("noise.amplitude", 0.001)) < 0:
            errors.append("noise.amplitude must be >= 0")
        if int(self.get_setting("noise.octaves", 64)) < 1:
            errors.append("noise.octaves must be >= 1")

        if int(self.get_setting("holes.min_remaining", 4096)) < 1:
            errors.append("holes.min_remaining must be >= 1")
        if int(self.get_setting("holes.max_holes", 10)) < 1:
            errors.append("holes.max_holes must be >= 1")

        preset = self.get_setting("model.preset", "toy")
        if preset not in MODEL_PRESETS:
            errors.append(f"model.preset must be one of: {list(MODEL_PRESETS)}")
        else:
            model = self.get_model_settings()
            if model["d_z"] % model["heads"] != 0:
                errors.append("model d_z must be divisible by heads")
            points = model["encoder_points"]
            if any(b >= a for a, b in zip(points, points[1:])):
                errors.append("model encoder_points must strictly decrease")
            if points and points[0] > model["n_points"]:
                errors.append("model encoder_points[0] must not exceed n_points")

        split = self.get_setting("cli.split", {}) or {}
        if not split or abs(sum(split.values()) - 1.0) > 1e-9:
            errors.append("cli.split ratios must sum to 1")
        if int(cfg.get("cli", {}).get("jobs", 1)) < 1:
            errors.append("cli.jobs must be >= 1")
        for key in ("cli.complexity_bins", "cli.length_bins"):
            if int(self.get_setting(key, 0)) < 0:
                errors.append(f"{key} must be >= 0")
        if float(self.get_setting("geometry.duplicate_threshold", 3e-4)) < 0:
            errors.append("geometry.duplicate_threshold must be >= 0")

        for error in errors:
            logger(f"❌ Config validation error: {error}", "ERROR")
        return errors

    def get_model_settings(self) -> Dict[str, Any]:
        """Preset merged with overrides"""
        preset = self.get_setting("model.preset", "toy")
        settings = copy.deepcopy(MODEL_PRESETS[preset])
        settings.update(self.get_setting("model.overrides", {}) or {})
        return settings

    def get_training_settings(self) -> Dict[str, Any]:
        preset = self.get_setting("model.preset", "toy")
        settings = copy.deepcopy(TRAINING_PRESETS.get(preset, TRAINING_PRESETS["toy"]))
        settings.update(self.get_setting("training.overrides", {}) or {})
        return settings

    def export_config(self, filename: str) -> bool:
        """Export configuration to file as canonical JSON"""
        try:
            with open(filename, 'w', encoding='utf-8') as f:
                f.write(canonical_json(self.config))
            logger(f"✅ Configuration exported to {filename}", "DEBUG")
            return True
        except OSError as e:
            logger(f"❌ Error exporting config: {str(e)}", "ERROR")
            return False

    def import_config(self, filename: str) -> bool:
        """Import configuration from file, keeping the previous one when invalid"""
        with open(filename, 'r', encoding='utf-8') as f:
            imported_config = json.load(f)

        previous = self.config
        self.config = self._get_default_config()
        self._merge_config(imported_config)
        if self.validate_config():
            logger(f"❌ Invalid configuration in {filename}", "ERROR")
            self.config = previous
            return False
        logger(f"✅ Configuration imported from {filename}", "DEBUG")
        return True

    def config_hash(self) -> str:
        """SHA-256 of the canonical resolved configuration"""
        return sha256_bytes(canonical_json(self.config).encode("utf-8"))
