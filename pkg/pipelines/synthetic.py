"""
synthetic.py

Purpose:
--------
Seeded toy dataset with the same sample contract as the real ones.

Every sample holds two ellipses (the lungs; the left lung sits on the
image's right side, as in a PA view) and a rectangle (the heart) on a
noise background. Shapes are jittered per sample, so held-out samples
differ from training ones.
"""

import logging
from typing import List

import numpy as np
from skimage.draw import ellipse, rectangle

from pipelines.standardization import normalize_per_image, one_hot_from_masks
from pipelines.transformations import ImageSample
from schema.errors import ConfigError


logger = logging.getLogger(__name__)

LUNG_INTENSITY = -1.0
HEART_INTENSITY = 0.6
NOISE_SCALE = 0.35


def synthetic_id(index: int) -> str:
    return f"synth_{index:04d}"


def make_synthetic_sample(index: int, resolution: int = 400, seed: int = 0,
                          heart_annotated: bool = True) -> ImageSample:
    if resolution % 16:
        raise ConfigError(f"synthetic resolution must be divisible by 16, got {resolution}")

    rng = np.random.default_rng([seed, index])
    r = resolution
    shape = (r, r)

    def jitter(scale):
        return rng.uniform(-scale, scale)

    masks = {}
    for name, side in (("right_lung", 0.30), ("left_lung", 0.70)):
        center = (r * (0.48 + jitter(0.04)), r * (side + jitter(0.03)))
        radii = (r * (0.28 + jitter(0.03)), r * (0.13 + jitter(0.02)))
        m = np.zeros(shape, dtype=np.float32)
        rr, cc = ellipse(center[0], center[1], radii[0], radii[1], shape=shape)
        m[rr, cc] = 1
        masks[name] = m

    top = int(r * (0.58 + jitter(0.03)))
    left = int(r * (0.42 + jitter(0.03)))
    height = int(r * (0.22 + jitter(0.03)))
    width = int(r * (0.18 + jitter(0.03)))
    heart = np.zeros(shape, dtype=np.float32)
    rr, cc = rectangle((top, left), extent=(height, width), shape=shape)
    heart[rr, cc] = 1
    if heart_annotated:
        masks["heart"] = heart

    mask, _ = one_hot_from_masks(masks, shape)

    image = rng.normal(0.0, NOISE_SCALE, size=shape)
    image += LUNG_INTENSITY * (mask[..., 0] + mask[..., 1])
    image += HEART_INTENSITY * heart
    image = normalize_per_image(image[..., None])

    return ImageSample(synthetic_id(index), image, mask, heart_annotated, "synthetic")


def synthetic_samples(count: int, resolution: int = 400, seed: int = 0,
                      heart_annotated: bool = True) -> List[ImageSample]:
    samples = [make_synthetic_sample(i, resolution, seed, heart_annotated) for i in range(count)]
    logger.info("Generated %d synthetic samples at %dx%d", count, resolution, resolution)
    return samples


def synthetic_ids(count: int) -> List[str]:
    return [synthetic_id(i) for i in range(count)]
