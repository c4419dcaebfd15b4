"""
postprocess.py

Purpose:
--------
Turn class probabilities into binary masks and clean them up.

- argmax_mask: one class per pixel, ties to the lowest channel index
- fill_holes: background regions not 4-connected to the border become foreground
- keep_largest: only the largest 8-connected component survives
  (equal sizes: the one met first in row-major scan order)

Foreground classes are cleaned independently; background is left as is.
"""

import numpy as np
from scipy import ndimage
from skimage.measure import label

from schema.config import CHANNELS
from schema.errors import ShapeError


FOREGROUND = tuple(range(len(CHANNELS) - 1))


def argmax_mask(probabilities: np.ndarray) -> np.ndarray:
    """[H, W, C] probabilities -> [H, W, C] boolean one-hot masks."""
    probabilities = np.asarray(probabilities)
    if probabilities.ndim != 3:
        raise ShapeError(f"argmax_mask expects [H, W, C], got {probabilities.shape}")
    winner = np.argmax(probabilities, axis=-1)
    return winner[..., None] == np.arange(probabilities.shape[-1])


def fill_holes(mask: np.ndarray) -> np.ndarray:
    return ndimage.binary_fill_holes(np.asarray(mask, dtype=bool))


def keep_largest(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    labels = label(mask, connectivity=2)
    if labels.max() == 0:
        return mask.copy()
    sizes = np.bincount(labels.ravel())[1:]
    # labels are numbered in scan order, argmax takes the first maximum
    return labels == (int(np.argmax(sizes)) + 1)


def clean_mask(mask: np.ndarray) -> np.ndarray:
    return keep_largest(fill_holes(mask))


def postprocess(masks: np.ndarray) -> np.ndarray:
    """Apply fill_holes then keep_largest to every foreground channel of [H, W, C] masks."""
    out = np.asarray(masks, dtype=bool).copy()
    for c in FOREGROUND:
        out[..., c] = clean_mask(out[..., c])
    return out


def predicted_masks(probabilities: np.ndarray, apply_postprocess: bool = True) -> np.ndarray:
    masks = argmax_mask(probabilities)
    return postprocess(masks) if apply_postprocess else masks
