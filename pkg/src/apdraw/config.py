"""Layered configuration: defaults, profile presets, TOML files, dotted overrides.

A config is a plain nested dict with one section per module. ``load_config``
merges, in order: built-in defaults, the selected profile preset, an optional
TOML file, and ``--set section.key=value`` style overrides.
"""

from __future__ import annotations

import copy
import hashlib
import json
from typing import Any, Iterable

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid configuration value or structure."""


DEFAULTS: dict[str, Any] = {
    "profile": "full",
    "seed": 0,
    "corpus": {
        "image_size": 512,
        "dilation_frac": 0.02,
    },
    "backbones": {
        "fallback": True,
        "seed": 0,
        "edge": "",
        "perceptual": "",
        "features": "",
        "fid": "",
        "fid_dim": 64,
    },
    "networks": {
        "base_channels": 64,
        "n_resblocks": 9,
    },
    "loss": {
        "adv": "log",
    },
    "train": {
        "epochs": 300,
        "batch": 1,
        "lr_gan": 2e-4,
        "beta1": 0.5,
        "beta2": 0.999,
        "lr_aux": 1e-4,
        "quality_after": 100,
        "aux_steps": 500,
        "ablations": {
            "no_style_feature": False,
            "no_truncation_loss": False,
            "single_disc_mask_channel": False,
            "no_quality_loss": False,
            "no_relaxed": False,
            "no_local_disc": False,
            "no_hed": False,
        },
    },
    "styles": {
        "bins": 256,
        "search_steps": 60,
        "search_lr": 0.05,
        "project_simplex": False,
    },
    "dissect": {
        "iou_threshold": 0.05,
        "n_candidates": 64,
    },
    "serve": {
        "port": 8754,
        "model_checkpoint": "",
        "study_manifest": "",
        "answer_log": "answers.jsonl",
    },
}

PROFILES: dict[str, dict[str, Any]] = {
    "full": {},
    "toy": {
        "corpus": {"image_size": 64},
        "backbones": {"fid_dim": 64},
        "networks": {"base_channels": 8},
        "train": {"epochs": 2, "batch": 2, "lr_aux": 1e-2},
    },
}


def _merge(base: dict[str, Any], extra: dict[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_scalar(text: str) -> Any:
    low = text.strip()
    if low.lower() in ("true", "false"):
        return low.lower() == "true"
    for cast in (int, float):
        try:
            return cast(low)
        except ValueError:
            pass
    return low


def parse_override(item: str) -> tuple[list[str], Any]:
    """Parse one ``section.key=value`` override into a key path and value."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.key=value")
    path, raw = item.split("=", 1)
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {item!r} has an empty key path")
    return keys, _parse_scalar(raw)


def set_by_path(cfg: dict[str, Any], keys: "list[str] | str", value: Any) -> None:
    if isinstance(keys, str):
        keys = keys.split(".")
    node = cfg
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot descend into non-section key {key!r}")
    node[keys[-1]] = value


def get_by_path(cfg: dict[str, Any], dotted: str, default: Any = None) -> Any:
    node: Any = cfg
    for key in dotted.split("."):
        if not isinstance(node, dict) or key not in node:
            return default
        node = node[key]
    return node


def validate_config(cfg: dict[str, Any]) -> None:
    profile = cfg.get("profile")
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
    size = cfg["corpus"]["image_size"]
    if size < 16 or size % 4 != 0:
        raise ConfigError(f"corpus.image_size must be >= 16 and divisible by 4, got {size}")
    if profile == "toy":
        if size > 128:
            raise ConfigError(f"toy profile requires image_size <= 128, got {size}")
        if cfg["train"]["epochs"] > 10:
            raise ConfigError(f"toy profile requires epochs <= 10, got {cfg['train']['epochs']}")
    if cfg["loss"]["adv"] not in ("log", "lsgan"):
        raise ConfigError(f"loss.adv must be 'log' or 'lsgan', got {cfg['loss']['adv']!r}")
    if cfg["networks"]["n_resblocks"] < 1:
        raise ConfigError("networks.n_resblocks must be >= 1")
    if cfg["styles"]["bins"] < 2:
        raise ConfigError("styles.bins must be >= 2")


def load_config(
    path: str | None = None,
    profile: str | None = None,
    overrides: Iterable[str] = (),
) -> dict[str, Any]:
    """Build a validated config dict from defaults, profile, file, and overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    file_cfg: dict[str, Any] = {}
    if path is not None:
        with open(path, "rb") as fh:
            file_cfg = tomllib.load(fh)
    chosen = profile or file_cfg.get("profile") or cfg["profile"]
    if chosen not in PROFILES:
        raise ConfigError(f"unknown profile {chosen!r}; expected one of {sorted(PROFILES)}")
    cfg["profile"] = chosen
    cfg = _merge(cfg, PROFILES[chosen])
    cfg = _merge(cfg, file_cfg)
    cfg["profile"] = chosen
    for item in overrides:
        keys, value = parse_override(item)
        node: Any = cfg
        for key in keys:
            if not isinstance(node, dict) or key not in node:
                raise ConfigError(f"override targets unknown config key {'.'.join(keys)!r}")
            node = node[key]
        set_by_path(cfg, keys, value)
    validate_config(cfg)
    return cfg


def config_hash(cfg: dict[str, Any]) -> str:
    """Stable hash of the architecture-relevant config subset.

    Used by checkpoint archives to reject loads across incompatible
    configurations (different profile, channel plan, or image size).
    """
    relevant = {
        "profile": cfg.get("profile"),
        "image_size": get_by_path(cfg, "corpus.image_size"),
        "base_channels": get_by_path(cfg, "networks.base_channels"),
        "n_resblocks": get_by_path(cfg, "networks.n_resblocks"),
    }
    blob = json.dumps(relevant, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
