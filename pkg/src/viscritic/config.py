"""Configuration loading: defaults, strict key checking, normalized echo.

One YAML file drives the whole pipeline. Every LLM-backed step gets its
own provider/model block so stages can run against different endpoints;
secrets never live in the file, only the names of environment variables
that hold them.
"""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .errors import ConfigError

MODEL_PURPOSES = (
    "filter",
    "classify",
    "instruct",
    "export",
    "generate",
    "improve",
    "suggest",
    "judge",
    "pairwise",
    "critique_predict",
)

SPLIT_STRATEGIES = ("uniform", "by_typology")


def _model_block(purpose: str) -> dict:
    return {
        "provider": "mock",
        "model": f"mock-{purpose}",
        "base_url": "",
        "api_key_env": "",
        "temperature": 0.0,
    }


def defaults() -> dict:
    return {
        "store": "store",
        "concurrency": 8,
        "ingest": {"notebooks": "notebooks"},
        "models": {purpose: _model_block(purpose) for purpose in MODEL_PURPOSES},
        "gateway": {
            "cache_dir": "auto",
            "max_attempts": 5,
            "base_delay": 1.0,
            "backoff_factor": 2.0,
            "jitter": 0.2,
            "mock_scripts": "",
        },
        "simhash": {"threshold": 3, "shingle": 1},
        "selection": {"round_size": 50},
        "export": {"similarity_threshold": 0.95},
        "render": {
            "viewport_width": 1200,
            "viewport_height": 800,
            "timeout_ms": 20000,
            "command": [],
        },
        "splits": {"test_count": 0, "seed": 0, "strategy": "uniform"},
        "qa": {"rate": 0.1, "seed": 0},
        "studio": {
            "host": "127.0.0.1",
            "port": 8800,
            "tokens_env": "VISCRITIC_STUDIO_TOKENS",
            "suggestions": 3,
            "assets": "",
        },
    }


def _merge(base: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        default = base[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here} must be a mapping")
            out[key] = _merge(default, value, here)
            continue
        out[key] = _coerce(default, value, here)
    return out


def _coerce(default, value, path: str):
    if isinstance(default, bool) or isinstance(value, bool):
        raise ConfigError(f"{path} has no boolean form")
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path} must be a string, got {type(value).__name__}")
        return value
    if isinstance(default, int):
        if not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer, got {type(value).__name__}")
        return value
    if isinstance(default, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number, got {type(value).__name__}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{path} must be a list of strings")
        return list(value)
    raise ConfigError(f"{path} has unsupported default type {type(default).__name__}")


def _check_ranges(cfg: dict) -> None:
    threshold = cfg["simhash"]["threshold"]
    if not 0 <= threshold <= 64:
        raise ConfigError(f"simhash.threshold {threshold} out of range 0..64")
    if cfg["simhash"]["shingle"] < 1:
        raise ConfigError("simhash.shingle must be at least 1")
    if cfg["concurrency"] < 1:
        raise ConfigError("concurrency must be at least 1")
    if cfg["selection"]["round_size"] < 1:
        raise ConfigError("selection.round_size must be at least 1")
    if cfg["gateway"]["max_attempts"] < 1:
        raise ConfigError("gateway.max_attempts must be at least 1")
    render = cfg["render"]
    if render["viewport_width"] < 1 or render["viewport_height"] < 1:
        raise ConfigError("render viewport dimensions must be positive")
    if render["timeout_ms"] < 1:
        raise ConfigError("render.timeout_ms must be positive")
    if not 0.0 < cfg["export"]["similarity_threshold"] <= 1.0:
        raise ConfigError("export.similarity_threshold must be in (0, 1]")
    if not 0.0 < cfg["qa"]["rate"] <= 1.0:
        raise ConfigError(f"qa.rate {cfg['qa']['rate']} out of range (0, 1]")
    if cfg["splits"]["test_count"] < 0:
        raise ConfigError("splits.test_count must be non-negative")
    if cfg["splits"]["strategy"] not in SPLIT_STRATEGIES:
        raise ConfigError(
            f"splits.strategy must be one of {SPLIT_STRATEGIES}, got {cfg['splits']['strategy']!r}"
        )
    if not 1 <= cfg["studio"]["port"] <= 65535:
        raise ConfigError("studio.port out of range 1..65535")
    for purpose, block in cfg["models"].items():
        if block["provider"] not in ("mock", "http"):
            raise ConfigError(
                f"models.{purpose}.provider must be 'mock' or 'http', got {block['provider']!r}"
            )
        if block["provider"] == "http" and not block["base_url"]:
            raise ConfigError(f"models.{purpose}.base_url required for the http provider")


def normalize(overrides: dict | None) -> dict:
    """Fill defaults over the given overrides and range-check the result."""
    if overrides is None:
        overrides = {}
    if not isinstance(overrides, dict):
        raise ConfigError("config root must be a mapping")
    cfg = _merge(defaults(), overrides, "")
    _check_ranges(cfg)
    return cfg


def load_config(path: str | Path | None) -> dict:
    """Parse a YAML config file; a missing path means pure defaults."""
    if path is None:
        return normalize({})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        loaded = yaml.safe_load(path.read_text("utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"config parse failure: {exc}") from exc
    return normalize(loaded)


def validate_config(path: str | Path) -> dict:
    """Normalize the file at path; the echoed result records the run's settings."""
    return load_config(path)
