"""
tensor_cache.py

Purpose:
--------
Optional on-disk cache of preprocessed samples.

Entries are .npz files keyed by a content hash of the source file bytes,
the dataset layout fields that affect decoding, the pipeline version and
the build resolution, so a change to any of them invalidates the entry.
"""

import hashlib
import logging
from pathlib import Path
from typing import Iterable, Mapping, Optional, Tuple

import numpy as np


logger = logging.getLogger(__name__)


def content_key(paths: Iterable, pipeline_version: str, resolution: int,
                layout: Optional[Mapping[str, object]] = None) -> str:
    """
    Digest of the source bytes, the pipeline version, the build resolution
    and the layout fields that change decoding (e.g. invert, heart_annotated).
    """
    digest = hashlib.sha256()
    digest.update(f"{pipeline_version}|{resolution}".encode())
    for name, value in sorted((layout or {}).items()):
        digest.update(f"|{name}={value!r}".encode())
    for p in paths:
        digest.update(b"\x00")
        if p is None:
            continue
        with open(p, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                digest.update(chunk)
    return digest.hexdigest()


class TensorCache:

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.npz"

    def get(self, key: str) -> Optional[Tuple[np.ndarray, np.ndarray]]:
        path = self._path(key)
        if not path.exists():
            self.misses += 1
            return None
        try:
            with np.load(path) as data:
                entry = data["image"], data["mask"]
        except (OSError, KeyError, ValueError) as e:
            logger.warning("Ignoring unreadable cache entry %s: %s", path.name, e)
            self.misses += 1
            return None
        self.hits += 1
        return entry

    def put(self, key: str, image: np.ndarray, mask: np.ndarray):
        path = self._path(key)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, image=image, mask=mask)
        tmp.replace(path)
