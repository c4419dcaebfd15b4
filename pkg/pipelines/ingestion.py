"""
ingestion.py

Purpose:
--------
Raw file ingestion for the CXR datasets.

- Decodes JSRT raw images and PNG/GIF images and masks
- Scans a dataset directory against its registry layout and builds an
  ingestion audit table (one row per image, with its mask files)

This module does NOT resize, normalize or one-hot anything.
"""

import logging
import os
from pathlib import Path
from typing import Dict, List

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError

from schema.config import DatasetLayout
from schema.errors import FormatError, MissingPathError


logger = logging.getLogger(__name__)


# -----------------------------
# JSRT raw format
# -----------------------------
# 2048 x 2048 pixels, one 16-bit big-endian word per pixel, 12 significant
# bits. Raw files store inverse video; polarity is flipped on load so that
# higher values are brighter on film.

JSRT_EXTENT = 2048
JSRT_DTYPE = np.dtype(">u2")
JSRT_MAX = 4095
JSRT_BYTES = JSRT_EXTENT * JSRT_EXTENT * JSRT_DTYPE.itemsize


def load_jsrt_image(path, invert: bool = True) -> np.ndarray:
    """Decode a JSRT .IMG file to float32 [2048, 2048, 1] with values in [0, 4095]."""
    path = Path(path)
    size = path.stat().st_size
    if size != JSRT_BYTES:
        raise FormatError(f"{path}: expected {JSRT_BYTES} bytes for a JSRT image, found {size}")

    raw = np.fromfile(path, dtype=JSRT_DTYPE).reshape(JSRT_EXTENT, JSRT_EXTENT)
    if raw.max() > JSRT_MAX:
        raise FormatError(f"{path}: pixel value {int(raw.max())} exceeds 12-bit depth")

    values = raw.astype(np.float32)
    if invert:
        values = JSRT_MAX - values
    return values[..., None]


def write_jsrt_image(path, values: np.ndarray, invert: bool = True):
    """Inverse of load_jsrt_image; used to build fixture files."""
    values = np.asarray(values).reshape(JSRT_EXTENT, JSRT_EXTENT)
    if values.min() < 0 or values.max() > JSRT_MAX:
        raise FormatError(f"JSRT values must lie in [0, {JSRT_MAX}]")
    stored = JSRT_MAX - values if invert else values
    np.rint(stored).astype(JSRT_DTYPE).tofile(path)


# -----------------------------
# PNG / GIF images and masks
# -----------------------------

_GRAY_MODES = {"1", "L", "I", "I;16", "I;16B", "I;16L", "F"}


def _open_gray(path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode == "P":
                palette = np.asarray(img.getpalette()[:768]).reshape(-1, 3)
                if not np.all((palette[:, 0] == palette[:, 1]) & (palette[:, 1] == palette[:, 2])):
                    raise FormatError(f"{path}: palette image is not grayscale")
                img = img.convert("L")
            if img.mode not in _GRAY_MODES:
                raise FormatError(f"{path}: expected a grayscale image, found mode {img.mode}")
            return np.asarray(img)
    except (UnidentifiedImageError, OSError) as e:
        raise FormatError(f"{path}: unreadable image ({e})") from e


def load_png_image(path) -> np.ndarray:
    """Decode a grayscale image to float32 [h, w, 1]."""
    return _open_gray(path).astype(np.float32)[..., None]


def load_mask_image(path) -> np.ndarray:
    """Decode a mask image to {0, 1} float32 [h, w, 1], thresholded at half its max intensity."""
    values = _open_gray(path).astype(np.float32)
    peak = float(values.max())
    if peak <= 0:
        return np.zeros(values.shape + (1,), dtype=np.float32)
    return (values > peak / 2).astype(np.float32)[..., None]


def load_image(path, layout: DatasetLayout) -> np.ndarray:
    if layout.image_format == "jsrt_raw":
        return load_jsrt_image(path, invert=layout.invert)
    return load_png_image(path)


def load_image_file(path) -> np.ndarray:
    """Decode a loose image file by suffix: .img is JSRT raw, anything else goes through Pillow."""
    if Path(path).suffix.lower() == ".img":
        return load_jsrt_image(path)
    return load_png_image(path)


# -----------------------------
# Directory scan
# -----------------------------

def ensure_dataset_directories(layout: DatasetLayout) -> Path:
    """Raise naming every expected directory that is absent."""
    root = layout.resolved_root()
    expected = [root / layout.image_dir] + [root / d for d in layout.mask_dirs.values()]
    missing = [str(p) for p in expected if not p.is_dir()]
    if missing:
        raise MissingPathError(f"dataset {layout.name}: missing directories: {', '.join(missing)}")
    return root


def scan_dataset(layout: DatasetLayout) -> pd.DataFrame:
    """
    Ingestion audit table: one row per image with its mask paths.

    Columns: id, image_path, file_size_mb, mask_<channel> (path or None),
    missing_masks (list of channel names).
    """
    root = ensure_dataset_directories(layout)
    image_dir = root / layout.image_dir

    rows: List[Dict] = []
    for image_path in sorted(image_dir.glob(layout.image_glob)):
        stem = image_path.stem
        row = {
            "id": stem,
            "image_path": str(image_path),
            "file_size_mb": round(os.path.getsize(image_path) / (1024 * 1024), 2),
        }
        missing = []
        for channel, mask_dir in layout.mask_dirs.items():
            mask_path = root / mask_dir / layout.mask_glob.format(stem=stem)
            row[f"mask_{channel}"] = str(mask_path) if mask_path.exists() else None
            if not mask_path.exists():
                missing.append(channel)
        row["missing_masks"] = missing
        rows.append(row)

    logger.info("Scanned %d images for dataset %s", len(rows), layout.name)
    return pd.DataFrame(rows)
