"""Run configuration: schema-validated JSON loading and artifact provenance."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .arm import DEFAULT_ANGLE_LIMIT, PlanarArm
from .ebm import (
    DEFAULT_HIDDEN,
    DEFAULT_VEL_NORM,
    N_ITERATIONS,
    N_PARTICLES,
    SIGMA_DECAY,
    SIGMA_INIT,
    SIGMA_MIN,
)
from .errors import ConfigError
from .planner import DEFAULT_CANDIDATES, DEFAULT_GOAL_SAMPLES, SCENARIO_VEL_RANGE
from .rollout import MAX_ROLLOUT_STEPS
from .sim import SimConfig
from .table import TableGeometry


@dataclass(frozen=True)
class PlannerSection:
    lambda1: float = 1.0
    lambda2: float = 0.2
    beta: float = 0.5
    u_limit: float = DEFAULT_ANGLE_LIMIT
    n_goal_samples: int = DEFAULT_GOAL_SAMPLES
    m_candidates: int = DEFAULT_CANDIDATES
    n_scenarios: int = 3000
    max_steps: int = MAX_ROLLOUT_STEPS
    vel_range: float = SCENARIO_VEL_RANGE


@dataclass(frozen=True)
class EbmSection:
    hidden: tuple = DEFAULT_HIDDEN
    n_particles: int = N_PARTICLES
    n_iterations: int = N_ITERATIONS
    sigma_init: float = SIGMA_INIT
    sigma_decay: float = SIGMA_DECAY
    sigma_min: float = SIGMA_MIN
    vel_norm: float = DEFAULT_VEL_NORM
    epochs: int = 800
    learning_rate: float = 1e-3
    lr_decay_every: int = 200
    lr_decay_factor: float = 0.5
    batch_size: int = 64
    stop_loss: float | None = None


@dataclass(frozen=True)
class InstanceSection:
    name: str
    lambda1: float
    lambda2: float
    beta: float
    planner: str = "brute_force"   # or "ebm"
    weights_file: str | None = None


def default_instances() -> tuple:
    return (
        InstanceSection("conservative", 1.0, 0.0, 0.5),
        InstanceSection("balanced", 1.0, 0.2, 0.5),
        InstanceSection("aggressive", 0.0, 1.0, 0.5),
    )


@dataclass(frozen=True)
class HarnessSection:
    grid_nx: int = 5
    grid_ny: int = 5
    grid_reps: int = 4
    grid_x: tuple = (0.25, 0.75)
    grid_y: tuple = (-0.3, 0.3)
    drift_vel: float = 0.1            # m/s, uniform per-axis release drift
    exec_sigma_angle: float = 0.02    # rad, execution noise on the angle
    exec_sigma_speed: float = 0.05    # m/s, execution noise on the speed
    shot_timeout_steps: int = 500
    instances: tuple = field(default_factory=default_instances)


@dataclass(frozen=True)
class RunConfig:
    table: TableGeometry = field(default_factory=TableGeometry)
    sim: SimConfig = field(default_factory=SimConfig)
    arm: PlanarArm = field(default_factory=PlanarArm)
    planner: PlannerSection = field(default_factory=PlannerSection)
    ebm: EbmSection = field(default_factory=EbmSection)
    harness: HarnessSection = field(default_factory=HarnessSection)
    seed: int = 0
    collect_episodes: int = 100
    collect_steps: int = 50


def _coerce(value, target_type, path):
    """Coerce a JSON value to the field's type, tolerating int-for-float."""
    if target_type is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"{path}: must be finite")
        return float(value)
    if target_type is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected integer, got {value!r}")
        return value
    if target_type is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected string, got {value!r}")
        return value
    if target_type is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected boolean, got {value!r}")
        return value
    return value


def _merge_dataclass(instance, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object")
    by_name = {f.name: f for f in dataclasses.fields(instance)}
    updates = {}
    for key, value in data.items():
        if key not in by_name:
            raise ConfigError(f"{path}.{key}: unknown key")
        current = getattr(instance, key)
        sub = f"{path}.{key}"
        if dataclasses.is_dataclass(current):
            updates[key] = _merge_dataclass(current, value, sub)
        elif isinstance(current, tuple) and key == "instances":
            if not isinstance(value, list):
                raise ConfigError(f"{sub}: expected a list")
            updates[key] = tuple(
                _merge_dataclass(InstanceSection("", 0.0, 0.0, 0.0), item, f"{sub}[{i}]")
                for i, item in enumerate(value)
            )
        elif isinstance(current, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{sub}: expected a list")
            updates[key] = tuple(value)
        elif current is None or value is None:
            updates[key] = value
        else:
            updates[key] = _coerce(value, type(current), sub)
    try:
        return dataclasses.replace(instance, **updates)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    """Validate and apply overrides onto the default configuration.

    Unknown keys are rejected with their dotted path.
    """
    return _merge_dataclass(RunConfig(), data, "config")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def config_to_dict(cfg) -> dict:
    if dataclasses.is_dataclass(cfg):
        return {f.name: config_to_dict(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}
    if isinstance(cfg, tuple):
        return [config_to_dict(v) for v in cfg]
    return cfg


def config_hash(config: RunConfig) -> str:
    """Stable hash of the full configuration, embedded in artifacts."""
    canonical = json.dumps(config_to_dict(config), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
