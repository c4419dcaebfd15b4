"""
manifest.py

Purpose:
--------
Run directories, run manifests and run locks.

- A run directory is <out_dir>/<timestamp>_<config hash>.
- The manifest is written before any other artifact and never rewritten;
  it records the merged configuration, the split file, format versions,
  seeds and architecture fingerprints.
- A lock file created with O_CREAT | O_EXCL keeps a second process out
  of a run directory.
"""

import json
import logging
import os
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel

from networks.architecture import critic_table, fingerprint, segmentor_table
from pipelines.transformations import PIPELINE_VERSION
from schema.config import RunConfig
from schema.errors import ConfigError, FormatError
from storage.checkpoints import FORMAT_VERSION

logger = logging.getLogger(__name__)


MANIFEST_FILE = "manifest.json"
LOCK_FILE = ".lock"
TIMESTAMP_FORMAT = "%Y%m%d-%H%M%S"


class RunManifest(BaseModel):
    command: str
    run_dir: str
    created_at: str
    config: Dict
    config_hash: str
    datasets_registry: str
    split_file: Optional[str] = None
    seeds: Dict[str, int]
    fingerprints: Dict[str, Optional[str]]
    versions: Dict[str, str]
    argv: List[str] = []


def build_manifest(command: str, config: RunConfig, run_dir: Path, split_file: Optional[str] = None,
                   argv: Optional[List[str]] = None) -> RunManifest:
    train = config.train
    seg = fingerprint(segmentor_table(train.resolution))
    critic = fingerprint(critic_table(train.resolution, train.include_image)) if train.mode == "scan" else None
    return RunManifest(
        command=command,
        run_dir=str(run_dir),
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        config=config.model_dump(mode="json"),
        config_hash=config.config_hash(),
        datasets_registry=config.data.datasets_registry,
        split_file=split_file,
        seeds={"train": train.seed, "split": config.data.split_seed, "bootstrap": config.eval.bootstrap_seed},
        fingerprints={"segmentor": seg, "critic": critic},
        versions={"checkpoint_format": str(FORMAT_VERSION), "pipeline": PIPELINE_VERSION},
        argv=list(argv or []),
    )


# -----------------------------
# Manifest files
# -----------------------------

def write_manifest(manifest: RunManifest, run_dir: Path, name: str = MANIFEST_FILE) -> Path:
    """Write the manifest once; an existing manifest must describe the same configuration."""
    path = Path(run_dir) / name
    if path.exists():
        existing = read_manifest(run_dir, name)
        if existing.config_hash != manifest.config_hash:
            raise ConfigError(
                f"{path} records config {existing.config_hash}, this run uses {manifest.config_hash}"
            )
        return path
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest.model_dump(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Manifest written to %s", path)
    return path


def read_manifest(run_dir: Path, name: str = MANIFEST_FILE) -> RunManifest:
    path = Path(run_dir) / name
    try:
        return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValueError as e:
        raise FormatError(f"{path}: malformed manifest: {e}") from e


# -----------------------------
# Run directories
# -----------------------------

def new_run_dir(out_dir: Path, config_hash: str, now: Optional[datetime] = None) -> Path:
    stamp = (now or datetime.now()).strftime(TIMESTAMP_FORMAT)
    path = Path(out_dir) / f"{stamp}_{config_hash}"
    suffix = 1
    while path.exists():
        path = Path(out_dir) / f"{stamp}_{config_hash}.{suffix}"
        suffix += 1
    path.mkdir(parents=True)
    return path


def find_resumable(out_dir: Path, config_hash: str, command: str = "train") -> Optional[Path]:
    """Most recent run directory created by `command` for the same configuration."""
    out_dir = Path(out_dir)
    if not out_dir.is_dir():
        return None
    matches = sorted(p for p in out_dir.iterdir()
                     if p.is_dir() and p.name.split(".")[0].endswith(f"_{config_hash}")
                     and (p / MANIFEST_FILE).exists() and read_manifest(p).command == command)
    return matches[-1] if matches else None


class RunLock:
    """Exclusive lock on a run directory for the lifetime of one command."""

    def __init__(self, run_dir: Path):
        self.path = Path(run_dir) / LOCK_FILE
        self._held = False

    def acquire(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            owner = self.path.read_text(encoding="utf-8").strip() if self.path.exists() else "?"
            raise ConfigError(f"run directory {self.path.parent} is locked by process {owner}") from None
        with os.fdopen(fd, "w") as f:
            f.write(str(os.getpid()))
        self._held = True

    def release(self):
        if self._held:
            self.path.unlink(missing_ok=True)
            self._held = False

    def __enter__(self) -> "RunLock":
        self.acquire()
        return self

    def __exit__(self, *exc):
        self.release()
        return False
