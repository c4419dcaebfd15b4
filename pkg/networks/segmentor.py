"""
segmentor.py

Purpose:
--------
The segmentation network S: image [R, R, 1] -> per-pixel distribution over
(left lung, right lung, heart, background).
"""

from typing import Optional

import numpy as np

from autodiff.tensor import DEFAULT_DTYPE
from networks.architecture import segmentor_table
from networks.model import Network, build_network
from schema.errors import ShapeError


def build_segmentor(seed: int, resolution: Optional[int] = None, dtype=DEFAULT_DTYPE,
                    registry: Optional[dict] = None) -> Network:
    return build_network("segmentor", segmentor_table(resolution, registry), seed, dtype)


def forward_segment(S: Network, image: np.ndarray, mode: str = "eval") -> np.ndarray:
    """
    Class probabilities for one image [R, R, 1] or a batch [N, R, R, 1].

    The returned rank matches the input rank.
    """
    image = np.asarray(image)
    if image.ndim not in (3, 4):
        raise ShapeError(f"segmentor input must be [R,R,1] or [N,R,R,1], got {image.shape}")
    probs = S.forward(image, mode=mode, update_stats=False)
    return probs[0] if image.ndim == 3 else probs
