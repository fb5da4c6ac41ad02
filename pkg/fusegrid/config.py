"""
Fusegrid configuration.

Two layers:
- Config: process-level settings from the environment (.env honoured)
- RunConfig: the JSON experiment file (base model, training, preprocessing, CV)
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import MISSING, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Optional, Union

from dotenv import load_dotenv

from errors import ConfigError, FormatError
from model import BaseConfig
from preprocess import PreprocessConfig

# Load .env if present (optional)
load_dotenv()

VERSION = "0.3.0"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _env_bool(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in {"1", "true", "yes", "y", "on"}


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None or not value.strip():
        return default
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{name} must be an integer, got {value!r}") from exc


@dataclass(frozen=True)
class Config:
    SEED: int = field(default_factory=lambda: _env_int("FUSEGRID_SEED", 0))
    DEBUG: bool = field(default_factory=lambda: _env_bool("FUSEGRID_DEBUG", False))
    LOG_LEVEL: str = field(default_factory=lambda: os.getenv("FUSEGRID_LOG_LEVEL", "INFO").upper())

    # Parallel (spec, fold) jobs for `search`
    JOBS: int = field(default_factory=lambda: _env_int("FUSEGRID_JOBS", 1))

    # Artifacts
    OUT_DIR: str = field(default_factory=lambda: os.getenv("FUSEGRID_OUT_DIR", "runs"))
    WRITE_MANIFEST: bool = field(default_factory=lambda: _env_bool("FUSEGRID_WRITE_MANIFEST", True))

    @classmethod
    def validate(cls, cfg: "Config") -> None:
        if cfg.JOBS < 1:
            raise ConfigError(f"FUSEGRID_JOBS must be >= 1, got {cfg.JOBS}")
        if cfg.SEED < 0:
            raise ConfigError(f"FUSEGRID_SEED must be >= 0, got {cfg.SEED}")
        if logging.getLevelName(cfg.LOG_LEVEL) == f"Level {cfg.LOG_LEVEL}":
            raise ConfigError(f"unknown FUSEGRID_LOG_LEVEL {cfg.LOG_LEVEL!r}")

    def print_config(self) -> None:
        print("=" * 68)
        print(f"Fusegrid {VERSION} - Configuration")
        print("=" * 68)
        print(f"Seed: {self.SEED}")
        print(f"Jobs: {self.JOBS}")
        print(f"Output dir: {self.OUT_DIR}")
        print(f"Run manifests: {self.WRITE_MANIFEST}")
        print(f"Log level: {self.LOG_LEVEL}")
        print(f"DEBUG: {self.DEBUG}")
        print("=" * 68)


def setup_logging(cfg: Config) -> None:
    level = logging.DEBUG if cfg.DEBUG else getattr(logging, cfg.LOG_LEVEL, logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


# ---- JSON run configuration ----
# train/search import these lazily to keep config importable from every module
def _coerce(value: Any, default: Any, where: str) -> Any:
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{where} must be true or false, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{where} must be an integer, got {value!r}")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{where} must be a number, got {value!r}")
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        if default:
            return tuple(_coerce(v, default[0], where) for v in value)
        return tuple(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"{where} must be a string, got {value!r}")
    return value


def typed_fields(cls, data: Any, section: str) -> Dict[str, Any]:
    """Check a JSON object against the field defaults of dataclass `cls`."""
    if not isinstance(data, dict):
        raise ConfigError(f"'{section}' must be a JSON object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in '{section}': {', '.join(unknown)}")
    values = {}
    for key, value in data.items():
        default = known[key].default
        values[key] = value if default is MISSING else _coerce(value, default, f"{section}.{key}")
    return values


def _section(cls, data: Optional[Dict[str, Any]], section: str):
    return cls(**typed_fields(cls, data or {}, section))


@dataclass(frozen=True)
class RunConfig:
    base: BaseConfig
    train: Any
    preprocess: PreprocessConfig
    cv: Any

    def validate(self) -> "RunConfig":
        self.base.validate()
        self.train.validate()
        self.preprocess.validate()
        self.cv.validate()
        return self

    def to_dict(self) -> Dict[str, Any]:
        return {
            "base": self.base.to_dict(),
            "train": self.train.to_dict(),
            "preprocess": self.preprocess.to_dict(),
            "cv": self.cv.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any], env: Optional[Config] = None) -> "RunConfig":
        from search import CvConfig
        from train import TrainConfig

        if not isinstance(data, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = sorted(set(data) - {"base", "train", "preprocess", "cv"})
        if unknown:
            raise ConfigError(f"unknown section(s) in run config: {', '.join(unknown)}")
        env = env or Config()
        train_data = typed_fields(TrainConfig, data.get("train") or {}, "train")
        train_data.setdefault("seed", env.SEED)
        base = BaseConfig.from_dict(typed_fields(BaseConfig, data.get("base") or {}, "base"))
        return cls(
            base=base,
            train=_section(TrainConfig, train_data, "train"),
            preprocess=_section(PreprocessConfig, data.get("preprocess"), "preprocess"),
            cv=_section(CvConfig, data.get("cv"), "cv"),
        ).validate()


def default_run_config(env: Optional[Config] = None) -> RunConfig:
    return RunConfig.from_dict({}, env)


def load_run_config(path: Union[str, Path], env: Optional[Config] = None) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    return RunConfig.from_dict(data, env)
