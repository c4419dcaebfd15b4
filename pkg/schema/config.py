"""
config.py

Purpose:
--------
Typed access to the YAML registries under schema/.

- run_config.yaml    -> RunConfig (train / data / eval sections)
- datasets.yaml      -> DatasetLayout per dataset
- architecture.yaml  -> raw dict, expanded by networks.architecture

Command-line overrides are applied on top of the file before
validation, so the validated RunConfig is always the merged result.
"""

import copy
import hashlib
import json
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from schema.errors import ConfigError, MissingPathError


SCHEMA_DIR = Path(__file__).resolve().parent
RUN_CONFIG_PATH = SCHEMA_DIR / "run_config.yaml"
DATASETS_PATH = SCHEMA_DIR / "datasets.yaml"
ARCHITECTURE_PATH = SCHEMA_DIR / "architecture.yaml"

DATA_ROOT_ENV = "SCAN_DATA_ROOT"

CHANNELS = ("left_lung", "right_lung", "heart", "background")
HEART_CHANNEL = 2
BACKGROUND_CHANNEL = 3


# -----------------------------
# Registry loading
# -----------------------------

def load_yaml_registry(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise MissingPathError(f"Missing registry file: {path}")
    with open(path, "r") as f:
        return yaml.safe_load(f) or {}


# -----------------------------
# Run configuration models
# -----------------------------

class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: Literal["scan", "fcn_only"] = "scan"
    lam: float = Field(0.001, ge=0.0)
    lr: float = Field(0.0002, gt=0.0)
    epochs: int = Field(350, ge=0)
    pretrain_epochs: int = Field(50, ge=0)
    batch_size: int = Field(10, ge=1)
    s_steps_per_d_step: int = Field(5, ge=1)
    seed: int = 0
    resolution: int = Field(400, ge=16)
    include_image: bool = False
    clip_norm: Optional[float] = Field(None, gt=0.0)
    checkpoint_every: int = Field(25, ge=1)
    deterministic: bool = False

    @model_validator(mode="after")
    def _check_schedule(self):
        if self.pretrain_epochs > self.epochs:
            raise ValueError(
                f"pretrain_epochs ({self.pretrain_epochs}) cannot exceed epochs ({self.epochs})"
            )
        if self.resolution % 16:
            raise ValueError(f"resolution must be divisible by 16, got {self.resolution}")
        return self

    @property
    def effective_lam(self) -> float:
        """fcn_only behaves exactly like lam = 0 with no critic."""
        return 0.0 if self.mode == "fcn_only" else self.lam

    @property
    def adversarial_epochs(self) -> int:
        return self.epochs - self.pretrain_epochs


class DataConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset: Literal["jsrt", "montgomery", "combined", "synthetic"] = "jsrt"
    datasets_registry: str = str(DATASETS_PATH)
    split_file: Optional[str] = None
    split_seed: int = 0
    val_count: int = Field(0, ge=0)
    skip_failed: bool = False
    cache_dir: Optional[str] = None
    synthetic_count: int = Field(30, ge=2)


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    postprocess: bool = True
    bootstrap_resamples: int = Field(1000, ge=1)
    bootstrap_seed: int = 0
    latency_budget_s: float = Field(5.0, gt=0.0)
    overlay: bool = False


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    out_dir: str = "runs"

    def config_hash(self) -> str:
        """Short stable hash of the merged configuration."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:10]


def apply_overrides(raw: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """
    Apply dotted-key overrides ("train.lam": 0.01) to a raw config dict.

    None values mean "flag not given" and are skipped.
    """
    merged = copy.deepcopy(raw)
    for dotted, value in overrides.items():
        if value is None:
            continue
        node = merged
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {dotted!r} descends into non-section {key!r}")
        node[leaf] = value
    return merged


def load_run_config(path=None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    raw = load_yaml_registry(path or RUN_CONFIG_PATH)
    raw = apply_overrides(raw, overrides or {})
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid run configuration: {e}") from e


# -----------------------------
# Dataset registry
# -----------------------------

class DatasetLayout(BaseModel):
    model_config = ConfigDict(extra="ignore")

    name: str
    description: str = ""
    root: Optional[str] = None
    image_dir: str = "images"
    image_format: Literal["jsrt_raw", "png"] = "png"
    image_glob: str = "*.png"
    invert: bool = False
    mask_dirs: Dict[str, str] = Field(default_factory=dict)
    mask_glob: str = "{stem}.png"
    heart_annotated: bool = True
    dev_count: int = Field(..., ge=0)

    @model_validator(mode="after")
    def _check_mask_channels(self):
        unknown = set(self.mask_dirs) - set(CHANNELS[:3])
        if unknown:
            raise ValueError(f"unknown mask channels {sorted(unknown)}; expected a subset of {CHANNELS[:3]}")
        if self.heart_annotated and self.mask_dirs and "heart" not in self.mask_dirs:
            raise ValueError(f"dataset {self.name} is heart-annotated but has no heart mask directory")
        return self

    def resolved_root(self) -> Path:
        """SCAN_DATA_ROOT/<name> when the variable is set, otherwise the registry root."""
        load_dotenv()
        env_root = os.getenv(DATA_ROOT_ENV)
        if env_root:
            return Path(env_root) / self.name
        if self.root is None:
            raise ConfigError(f"dataset {self.name} has no root directory")
        return Path(self.root)


def load_dataset_layouts(path=None) -> Dict[str, DatasetLayout]:
    registry = load_yaml_registry(path or DATASETS_PATH)
    channels = tuple(registry.get("channels", CHANNELS))
    if channels != CHANNELS:
        raise ConfigError(f"dataset registry channel order {channels} differs from {CHANNELS}")

    layouts = {}
    for name, entry in registry.get("datasets", {}).items():
        try:
            layouts[name] = DatasetLayout.model_validate({"name": name, **entry})
        except ValidationError as e:
            raise ConfigError(f"invalid layout for dataset {name}: {e}") from e
    return layouts


def dataset_members(dataset: str) -> List[str]:
    """Registry datasets that make up a --dataset choice."""
    return ["jsrt", "montgomery"] if dataset == "combined" else [dataset]
