"""Pipeline configuration with flag > env > config-file > default precedence."""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

log = logging.getLogger(__name__)

ENV_PREFIX = "LCMAP_"


@dataclass
class PipelineConfig:
    dt: float = 0.05
    gap_limit: float = 1.0
    horizon_s: float = 5.0
    jump_min: float = 2.0
    jump_max: float = 5.5
    cross_eps: float = 0.3
    settle_window: float = 1.0
    min_event_gap: float = 1.0
    seg_len: float = 200.0
    density_min: float = 10.0
    match_radius: float = 25.0
    heading_tol: float = 45.0
    bend_bin_width: float = 0.01
    bend_limit: float = 0.07
    slope_bin_width: float = 1.0
    slope_limit: float = 7.0
    min_bin_count: int = 5
    proximity_radius: float = 1000.0
    heatmap_cell_m: float = 500.0
    bootstrap_samples: int = 1000
    seed: int = 20210419
    threads: int = 1

    def __post_init__(self):
        for name in ("dt", "gap_limit", "horizon_s", "jump_min", "jump_max", "seg_len",
                     "match_radius", "heading_tol", "bend_bin_width", "slope_bin_width",
                     "proximity_radius", "heatmap_cell_m"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


_FIELDS = {f.name: f.type for f in dataclasses.fields(PipelineConfig)}


def _coerce(name: str, value):
    kind = _FIELDS[name]
    try:
        return int(value) if kind == "int" else float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


def load_config_file(path) -> dict:
    """Read a TOML or JSON key-value config file; only known keys allowed.

    A `pipeline` table/object scopes the pipeline keys; a `scenario` section,
    when present, is passed through untouched for the simulator.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    text = data.decode("utf-8")
    if str(path).endswith(".json") or text.lstrip().startswith("{"):
        doc = json.loads(text)
    else:
        doc = tomllib.loads(text)
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must be a table of keys")
    pipeline = doc.get("pipeline", {k: v for k, v in doc.items() if k in _FIELDS})
    unknown = set(pipeline) - set(_FIELDS)
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {sorted(unknown)}")
    out = {"pipeline": pipeline}
    if "scenario" in doc:
        out["scenario"] = doc["scenario"]
    return out


def resolve_config(file_path=None, overrides: dict | None = None) -> PipelineConfig:
    """Layer defaults < config file < LCMAP_* env vars < explicit flags."""
    values: dict = {}
    sources: dict = {}
    if file_path is not None:
        for k, v in load_config_file(file_path)["pipeline"].items():
            values[k] = _coerce(k, v)
            sources[k] = f"config file {file_path}"
    for name in _FIELDS:
        env_key = ENV_PREFIX + name.upper()
        if env_key in os.environ:
            values[name] = _coerce(name, os.environ[env_key])
            sources[name] = f"env {env_key}"
    for k, v in (overrides or {}).items():
        if v is None:
            continue
        if k not in _FIELDS:
            raise ConfigError(f"unknown config override {k!r}")
        coerced = _coerce(k, v)
        if k in values and values[k] != coerced:
            log.info("flag --%s=%s overrides %s (%s)", k.replace("_", "-"), coerced,
                     sources[k], values[k])
        values[k] = coerced
    return PipelineConfig(**values)
