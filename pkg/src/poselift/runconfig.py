"""Run configuration files: strict JSON schema with defaults.

Unknown keys are rejected with their full path; missing keys fall back to
the documented defaults. The POSELIFT_SEED environment variable overrides
the file's seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .model import ConfigError, ModelConfig
from .train import TrainSettings

SCHEMA_VERSION = 1
SEED_ENV_VAR = "POSELIFT_SEED"

_TRAIN_KEYS = ("epochs", "batch_size", "base_lr", "lr_decay", "weight_decay")
_DATA_KEYS = ("train_dir", "eval_dir")
_TOP_KEYS = ("version", "seed", "model", "train", "data")


@dataclass
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSettings = field(default_factory=TrainSettings)
    train_dir: str | None = None
    eval_dir: str | None = None


def _reject_unknown(section: dict, allowed: tuple, path: str) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)} (allowed: {list(allowed)})")


def parse_run_config(doc: dict, source: str = "<config>") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: top level must be an object")
    _reject_unknown(doc, _TOP_KEYS, source)
    if "version" not in doc:
        raise ConfigError(f"{source}: missing required key 'version'")
    if doc["version"] != SCHEMA_VERSION:
        raise ConfigError(
            f"{source}: schema version {doc['version']!r} unsupported (expected {SCHEMA_VERSION})")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"{source}.seed: expected an integer, got {seed!r}")

    model_doc = doc.get("model", {})
    if not isinstance(model_doc, dict):
        raise ConfigError(f"{source}.model: expected an object")
    try:
        model_cfg = ModelConfig.from_dict(model_doc)
    except (ConfigError, TypeError) as e:
        raise ConfigError(f"{source}.model: {e}") from e

    train_doc = doc.get("train", {})
    if not isinstance(train_doc, dict):
        raise ConfigError(f"{source}.train: expected an object")
    _reject_unknown(train_doc, _TRAIN_KEYS, f"{source}.train")
    settings = TrainSettings(seed=seed, **train_doc)
    try:
        settings.validate()
    except ValueError as e:
        raise ConfigError(f"{source}.train: {e}") from e

    data_doc = doc.get("data", {})
    if not isinstance(data_doc, dict):
        raise ConfigError(f"{source}.data: expected an object")
    _reject_unknown(data_doc, _DATA_KEYS, f"{source}.data")

    return RunConfig(seed=seed, model=model_cfg, train=settings,
                     train_dir=data_doc.get("train_dir"),
                     eval_dir=data_doc.get("eval_dir"))


def load_run_config(path: str | Path, env: dict | None = None) -> RunConfig:
    path = Path(path)
    env = os.environ if env is None else env
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
    cfg = parse_run_config(doc, source=str(path))
    override = env.get(SEED_ENV_VAR)
    if override is not None:
        try:
            cfg.seed = int(override)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR}={override!r} is not an integer")
        cfg.train.seed = cfg.seed
    return cfg
