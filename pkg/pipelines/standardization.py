"""
standardization.py

Purpose:
--------
Bring decoded images and masks onto the common grid.

Operations performed:
- bilinear resize to the build resolution (half-pixel centers, edge clamp)
- mask resize, re-binarization at 0.5 and one-hot encoding by channel priority
- per-image normalization (population variance)

Order is fixed: resize, then normalize.
"""

import logging
from typing import Dict, Tuple

import numpy as np
from skimage.transform import resize

from schema.config import CHANNELS
from schema.errors import ShapeError


logger = logging.getLogger(__name__)

NORMALIZE_EPS = 1e-8
MASK_THRESHOLD = 0.5

# left lung > right lung > heart > background
FOREGROUND_PRIORITY = CHANNELS[:3]


# -----------------------------
# Resizing
# -----------------------------

def resize_bilinear(image: np.ndarray, height: int = 400, width: int = 400) -> np.ndarray:
    """
    Bilinear resize of [h, w, C] (or [h, w]) to [height, width, C].

    Source and target pixel grids share their outer corners; samples that
    fall outside the source clamp to the edge.
    """
    image = np.asarray(image)
    if image.shape[0] < 2 or image.shape[1] < 2:
        raise ShapeError(f"resize_bilinear needs source extents >= 2, got {image.shape}")
    out_shape = (height, width) + image.shape[2:]
    out = resize(image.astype(np.float64), out_shape, order=1, mode="edge",
                 anti_aliasing=False, preserve_range=True)
    return out.astype(np.float32)


def resize_mask(mask: np.ndarray, height: int = 400, width: int = 400) -> np.ndarray:
    """Resize a binary mask with the image map, then re-binarize at 0.5."""
    return (resize_bilinear(mask, height, width) >= MASK_THRESHOLD).astype(np.float32)


# -----------------------------
# One-hot encoding
# -----------------------------

def one_hot_from_masks(masks: Dict[str, np.ndarray], shape: Tuple[int, int]) -> Tuple[np.ndarray, int]:
    """
    Build a [H, W, 4] one-hot mask from per-organ binary masks.

    Absent organs contribute an all-zero channel. Pixels claimed by more than
    one organ go to the highest-priority one; the number of such pixels is
    returned alongside the mask.
    """
    h, w = shape
    one_hot = np.zeros((h, w, len(CHANNELS)), dtype=np.float32)
    claimed = np.zeros((h, w), dtype=bool)
    conflicts = 0

    for c, name in enumerate(FOREGROUND_PRIORITY):
        if name not in masks:
            continue
        m = np.asarray(masks[name]).reshape(h, w) > 0
        conflicts += int(np.count_nonzero(m & claimed))
        take = m & ~claimed
        one_hot[..., c] = take
        claimed |= take

    one_hot[..., len(CHANNELS) - 1] = ~claimed
    return one_hot, conflicts


def check_one_hot(mask: np.ndarray) -> bool:
    return bool(np.all(mask.sum(axis=-1) == 1) and np.all((mask == 0) | (mask == 1)))


# -----------------------------
# Normalization
# -----------------------------

def normalize_per_image(image: np.ndarray, eps: float = NORMALIZE_EPS) -> np.ndarray:
    """(x - mean) / sqrt(var + eps) with statistics of this image only."""
    x = np.asarray(image, dtype=np.float64)
    out = (x - x.mean()) / np.sqrt(x.var() + eps)
    return out.astype(np.float32)


def standardize_image(image: np.ndarray, resolution: int) -> np.ndarray:
    return normalize_per_image(resize_bilinear(image, resolution, resolution))
