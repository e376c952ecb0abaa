"""Pipeline parameters, config files and ``key=value`` overrides."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields

import yaml


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    # proximity stage
    sphere_radius_m: float = 2.0
    max_reflectivity: float = 1.0
    reflectivity_threshold_frac: float = 0.01
    pillar_dx_m: float = 0.1
    pillar_dy_m: float = 0.1
    ground_clearance_min_m: float = 0.0
    label_correction_enabled: bool = True
    # ground model
    ground_cell_m: float = 1.0
    ground_tol_m: float = 0.15
    # clustering
    cluster_eps_m: float = 1.0
    cluster_min_pts: int = 3
    sigma_min_m: float = 0.1
    # isolated stage
    isolated_stage_enabled: bool = True
    second_stage_memory_save_enabled: bool = True
    history_ttl_steps: int = 150
    grid_extent_m: float = 200.0
    grid_dx_m: float = 0.1
    grid_dy_m: float = 0.1
    # boxes / ghosts; margin None = 0.5 m for scored (detector) boxes, 0 otherwise
    box_margin_m: float | None = None
    detector_box_margin_m: float = 0.5
    ghost_conf_thresh: float = 0.9
    select_confident_boxes: bool = False

    def __post_init__(self):
        for name in ("sphere_radius_m", "max_reflectivity", "pillar_dx_m", "pillar_dy_m",
                     "ground_cell_m", "cluster_eps_m", "sigma_min_m", "grid_extent_m",
                     "grid_dx_m", "grid_dy_m"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0, got {getattr(self, name)!r}")
        if not 0 <= self.reflectivity_threshold_frac <= 1:
            raise ConfigError("reflectivity_threshold_frac must lie in [0, 1]")
        if not 0 <= self.ghost_conf_thresh <= 1:
            raise ConfigError("ghost_conf_thresh must lie in [0, 1]")
        if self.ground_tol_m < 0 or self.detector_box_margin_m < 0:
            raise ConfigError("tolerances and margins must be >= 0")
        if self.box_margin_m is not None and self.box_margin_m < 0:
            raise ConfigError("box_margin_m must be >= 0")
        if self.cluster_min_pts < 1 or self.history_ttl_steps < 1:
            raise ConfigError("cluster_min_pts and history_ttl_steps must be >= 1")

    @property
    def reflectivity_threshold(self) -> float:
        """``t_r`` in sensor units."""
        return self.reflectivity_threshold_frac * self.max_reflectivity

    def margin_for(self, boxes) -> float:
        if self.box_margin_m is not None:
            return self.box_margin_m
        scored = any(b.confidence is not None for b in boxes)
        return self.detector_box_margin_m if scored else 0.0

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _coerce(key: str, value):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = _FIELDS[key].default
    if value is None:
        if key == "box_margin_m":
            return None
        raise ConfigError(f"{key} cannot be null")
    if isinstance(default, bool):
        if isinstance(value, str):
            low = value.strip().lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ConfigError(f"{key}: not a boolean: {value!r}")
        return bool(value)
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{key}: expected an integer, got {value!r}")
            return int(value)
        return float(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{key}: {e}") from e


def config_from_mapping(mapping: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    base = base or PipelineConfig()
    return base.replace(**{k: _coerce(k, v) for k, v in mapping.items()})


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    """Read a flat YAML/JSON mapping of config keys."""
    try:
        with open(os.fspath(path)) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a flat key/value mapping")
    return config_from_mapping(data, base)


def parse_overrides(items) -> dict:
    """``["key=value", ...]`` -> ``{key: value}`` with YAML scalar typing."""
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got {item!r}")
        out[key.strip()] = yaml.safe_load(raw) if raw.strip() else None
    return out
