"""
critic.py

Purpose:
--------
The critic network D: mask [R, R, 4] (optionally with the image as a 5th
channel) -> probability that the mask is a ground-truth annotation.

D mirrors the segmentor's down path and ends in global average pooling,
one dense unit and a sigmoid.
"""

from typing import Optional, Sequence, Union

import numpy as np

from autodiff.tensor import DEFAULT_DTYPE
from networks.architecture import critic_table
from networks.model import Network, build_network
from schema.config import HEART_CHANNEL
from schema.errors import LabelError, ShapeError


MASK_SUM_TOLERANCE = 1e-5


def build_critic(seed: int, include_image: bool = False, resolution: Optional[int] = None,
                 dtype=DEFAULT_DTYPE, registry: Optional[dict] = None) -> Network:
    return build_network("critic", critic_table(resolution, include_image, registry), seed, dtype)


def critic_input(mask: np.ndarray, image: Optional[np.ndarray] = None,
                 heart_annotated: Union[bool, Sequence[bool]] = True) -> np.ndarray:
    """
    Assemble D's input from a soft or one-hot mask batch [N, R, R, 4].

    The heart channel is zeroed for samples without heart annotation, so real
    and predicted masks of those samples look alike to the critic.
    """
    mask = np.asarray(mask)
    single = mask.ndim == 3
    if single:
        mask = mask[None]
        image = None if image is None else np.asarray(image)[None]

    flags = np.broadcast_to(np.asarray(heart_annotated, dtype=bool), (mask.shape[0],))
    if not flags.all():
        mask = mask.copy()
        mask[~flags, ..., HEART_CHANNEL] = 0

    if image is not None:
        image = np.asarray(image)
        if image.shape[:3] != mask.shape[:3] or image.shape[-1] != 1:
            raise ShapeError(f"image shape {image.shape} does not match mask shape {mask.shape}")
        mask = np.concatenate([mask, image.astype(mask.dtype)], axis=-1)
    return mask[0] if single else mask


def forward_critic(D: Network, mask: np.ndarray, image: Optional[np.ndarray] = None,
                   mode: str = "eval") -> Union[float, np.ndarray]:
    """Probability in (0, 1) for one mask, or one per mask of a batch."""
    mask = np.asarray(mask)
    if mask.shape[-1] != 4:
        raise ShapeError(f"critic masks need 4 channels, got shape {mask.shape}")
    if np.any(mask.sum(axis=-1) > 1 + MASK_SUM_TOLERANCE):
        raise LabelError("critic mask channels sum to more than 1 at some pixel")

    x = critic_input(mask, image)
    if x.shape[-1] != D.in_channels:
        raise ShapeError(
            f"critic expects {D.in_channels} input channels, got {x.shape[-1]} "
            f"({'image supplied to a mask-only critic' if image is not None else 'image missing'})"
        )
    probs = D.forward(x, mode=mode, update_stats=False)
    return float(probs[0]) if mask.ndim == 3 else probs
