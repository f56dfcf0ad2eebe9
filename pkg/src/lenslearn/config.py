"""Flat key = value configuration with one section per module.

Files are INI-style; every key below has a documented default, unknown
keys are rejected, and command-line ``--set section.key=value`` overrides
beat file values. Types are inferred from the defaults.
"""

from __future__ import annotations

import configparser
from copy import deepcopy


class ConfigError(ValueError):
    """Unknown key/section or unparseable value."""


DEFAULTS = {
    "data": {
        "dataset": "mnist6",          # mnist6 | emnist | kanji49
        "target_per_class": 1000,     # mnist6 subsample size per class
        "per_class_fraction": -1.0,   # >0 switches the subsample to a fraction
        "train_fraction": 0.9,
        "seed": 0,
        "object_hw": 32,              # object-plane image side
    },
    "optics": {
        "object_h": 32,
        "object_w": 32,
        "sensor_h": 125,
        "sensor_w": 170,
        "distance_mm": 250.0,
        "smoothing_sigma": 2.0,
        "seed": 0,
        "read_noise_sigma": 0.01,
        "frames_per_capture": 10,
        "psf_corr_length": 4.0,
        "psf_uniqueness": 0.5,
        "render_seed": 0,             # per-image noise stream base
    },
    "recon": {
        "depth": 4,
        "base_channels": 16,
        "input_hw": 128,
        "residual_in_block": True,
        "init_seed": 0,
        "epochs": 50,
        "batch_size": 32,
        "shuffle_seed": 0,
        "lr": 0.001,
        "checkpoint_every": 0,
        "target_noise_seed": 0,
    },
    "classifier": {
        "width_multiplier": 0.25,
        "init_seed": 0,
        "epochs": 30,
        "batch_size": 32,
        "shuffle_seed": 0,
        "lr": 0.001,
        "checkpoint_every": 0,
    },
    "report": {
        "grid_samples": 4,
    },
}


def _parse_value(section: str, key: str, raw: str):
    default = DEFAULTS[section][key]
    try:
        if isinstance(default, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(
            f"cannot parse [{section}] {key} = {raw!r} as {type(default).__name__}"
        ) from exc


def load_config(path=None, overrides=()) -> dict:
    """Defaults, overlaid by the file at ``path``, overlaid by overrides.

    Overrides are strings of the form ``section.key=value``.
    """
    cfg = deepcopy(DEFAULTS)
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in cfg:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in cfg[section]:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                cfg[section][key] = _parse_value(section, key, raw)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in cfg or key not in cfg[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        cfg[section][key] = _parse_value(section, key, raw)
    return cfg


def optics_config_from(cfg: dict):
    from .optics import OpticsConfig

    o = cfg["optics"]
    return OpticsConfig(
        object_h=o["object_h"],
        object_w=o["object_w"],
        sensor_h=o["sensor_h"],
        sensor_w=o["sensor_w"],
        distance_mm=o["distance_mm"],
        smoothing_sigma=o["smoothing_sigma"],
        seed=o["seed"],
        read_noise_sigma=o["read_noise_sigma"],
        frames_per_capture=o["frames_per_capture"],
        psf_corr_length=o["psf_corr_length"],
        psf_uniqueness=o["psf_uniqueness"],
    )
