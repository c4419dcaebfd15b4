"""
overlays.py

Purpose:
--------
Write predicted masks and contour overlays for inspection.

- mask files: one strictly binary 8-bit PNG per foreground class (0 / 255)
- overlay: the input image in gray with each predicted class outline drawn in colour
"""

from pathlib import Path
from typing import Dict

import numpy as np
from PIL import Image
from skimage.segmentation import find_boundaries

from schema.config import CHANNELS
from schema.errors import ShapeError


CONTOUR_COLOURS = {
    "left_lung": (255, 64, 64),
    "right_lung": (64, 160, 255),
    "heart": (255, 200, 0),
}


def gray_to_uint8(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3:
        image = image[..., 0]
    lo, hi = image.min(), image.max()
    if hi - lo <= 0:
        return np.zeros(image.shape, dtype=np.uint8)
    return np.round(255.0 * (image - lo) / (hi - lo)).astype(np.uint8)


def overlay_image(image: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """[R, R, 1] image and [R, R, C] boolean masks -> [R, R, 3] uint8."""
    gray = gray_to_uint8(image)
    if masks.shape[:2] != gray.shape:
        raise ShapeError(f"overlay shapes differ: image {gray.shape}, masks {masks.shape[:2]}")
    rgb = np.repeat(gray[..., None], 3, axis=-1)
    for c, name in enumerate(CHANNELS):
        if name not in CONTOUR_COLOURS:
            continue
        edge = find_boundaries(masks[..., c], mode="inner")
        rgb[edge] = CONTOUR_COLOURS[name]
    return rgb


def write_masks(masks: np.ndarray, out_dir: Path, sample_id: str) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    for c, name in enumerate(CHANNELS):
        if name not in CONTOUR_COLOURS:
            continue
        path = out_dir / f"{sample_id}_{name}.png"
        Image.fromarray(np.where(masks[..., c], 255, 0).astype(np.uint8), mode="L").save(path)
        written[name] = path
    return written


def write_overlay(image: np.ndarray, masks: np.ndarray, out_dir: Path, sample_id: str) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{sample_id}_overlay.png"
    Image.fromarray(overlay_image(image, masks), mode="RGB").save(path)
    return path
