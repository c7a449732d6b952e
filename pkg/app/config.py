import logging
import os
import shutil
from pathlib import Path
from typing import List, Optional

import toml
from dotenv import load_dotenv
from packaging.version import InvalidVersion, Version
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app.error_handling import ConfigError
from app.paths import get_app_dir, get_example_config_path, get_user_data_dir
from app.version import CONFIG_SCHEMA_VERSION
from detection.retrieval import RetrievalConfig
from detection.selector import SelectorConfig
from simulation.trajectory import SynthConfig
from vision.dird import DirdConfig

logger = logging.getLogger(__name__)

CONFIG_ENV = "LOOPCLOSURE_CONFIG"
THREADS_ENV = "LOOPCLOSURE_THREADS"


# --- Sections ---

class FilterSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gyro_noise_std: float = Field(5e-4, ge=0, description="Gyro noise assumed by the filter (rad/s)")
    accel_noise_std: float = Field(0.02, ge=0, description="Accelerometer noise assumed by the filter (m/s^2)")
    observation_std: float = Field(0.5, gt=0, description="Position observation noise (m)")
    initial_position_std: float = Field(0.0, ge=0)
    initial_velocity_std: float = Field(0.0, ge=0)
    initial_rotation_std: float = Field(0.0, ge=0)
    pose_prior_std: float = Field(0.0, ge=0, description="Position std given to poses of datasets without controls (m)")


class EvalSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    truth_radius_m: Optional[float] = Field(None, gt=0, description="Defaults to 3x the median frame spacing")
    match_tolerance: int = Field(5, ge=0, description="Frames a detection may be off from a truth pair")
    thresholds: Optional[List[float]] = Field(None, description="Explicit sweep; overrides sweep_min/max/steps")
    sweep_min: float = Field(0.5, ge=0, le=1)
    sweep_max: float = Field(0.95, ge=0, le=1)
    sweep_steps: int = Field(10, ge=1)

    def sweep(self) -> List[float]:
        if self.thresholds:
            return sorted(float(t) for t in self.thresholds)
        if self.sweep_steps == 1:
            return [self.sweep_min]
        step = (self.sweep_max - self.sweep_min) / (self.sweep_steps - 1)
        return [self.sweep_min + k * step for k in range(self.sweep_steps)]


class RuntimeSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    threads: int = Field(1, ge=1)
    parallel_timing: bool = Field(False, description="Let bench use worker threads (per-stage times get noisier)")


class PathSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: Optional[str] = Field(None, description="Manifest file or dataset directory")
    cache: Optional[str] = Field(None, description="Descriptor cache file")
    out_dir: str = Field("out", description="Where detect/eval/bench write their outputs")


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: str = CONFIG_SCHEMA_VERSION
    dird: DirdConfig = Field(default_factory=DirdConfig)
    retrieval: RetrievalConfig = Field(default_factory=RetrievalConfig)
    selector: SelectorConfig = Field(default_factory=SelectorConfig)
    filter: FilterSettings = Field(default_factory=FilterSettings)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    eval: EvalSettings = Field(default_factory=EvalSettings)
    runtime: RuntimeSettings = Field(default_factory=RuntimeSettings)
    paths: PathSettings = Field(default_factory=PathSettings)

    @field_validator("version")
    @classmethod
    def _supported(cls, v):
        try:
            major = Version(str(v)).major
        except InvalidVersion:
            raise ValueError(f"invalid config version {v!r}")
        if major != Version(CONFIG_SCHEMA_VERSION).major:
            raise ValueError(f"unsupported config version {v} (this build reads {CONFIG_SCHEMA_VERSION}.x)")
        return str(v)


# --- Loading ---

def _describe(exc: ValidationError) -> str:
    error = exc.errors()[0]
    key = ".".join(str(part) for part in error["loc"])
    if error["type"] == "extra_forbidden":
        return f"unknown config key '{key}'"
    return f"invalid value for '{key}': {error['msg']}"


def validate_config(data: dict) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from exc


def _default_config_path() -> Path:
    # First run: seed the user config from the shipped example
    config_path = get_user_data_dir() / "config.toml"
    example_config_path = get_example_config_path()
    if not config_path.exists() and example_config_path.exists():
        shutil.copy2(example_config_path, config_path)
    return config_path


def load_config(path=None, overrides: Optional[dict] = None) -> PipelineConfig:
    """
    Resolution order: explicit path, $LOOPCLOSURE_CONFIG, then the user
    config (copied from config.example.toml on first run). `overrides` is a
    nested dict merged over the file, as the CLI flags produce.
    """
    load_dotenv(get_app_dir() / ".env")

    path = path or os.getenv(CONFIG_ENV)
    config_path = Path(path) if path else _default_config_path()

    data = {}
    if config_path.exists():
        try:
            data = toml.load(config_path)
        except (toml.TomlDecodeError, OSError) as exc:
            raise ConfigError(f"cannot parse {config_path}: {exc}") from exc
    elif path:
        raise ConfigError(f"config file not found: {config_path}")

    threads = os.getenv(THREADS_ENV)
    if threads and "threads" not in data.get("runtime", {}):
        try:
            data.setdefault("runtime", {})["threads"] = int(threads)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {threads!r}") from None

    for section, values in (overrides or {}).items():
        if isinstance(values, dict):
            data.setdefault(section, {}).update(values)
        else:
            data[section] = values

    cfg = validate_config(data)
    logger.debug(f"Config loaded from {config_path if config_path.exists() else 'defaults'}")
    return cfg


def dump_config(cfg: PipelineConfig, path) -> Path:
    """Writes the fully materialized config (None-valued keys are left out)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        toml.dump(cfg.model_dump(mode="json", exclude_none=True), f)
    return path
