"""
Shared pytest fixtures.

Tests never read SCAN_DATA_ROOT from the developer's environment; the
real-data checks marked `extended` opt back in explicitly.
"""

import numpy as np
import pytest
from PIL import Image

from schema.config import DATA_ROOT_ENV, DatasetLayout


@pytest.fixture(autouse=True)
def _isolate_data_root(monkeypatch):
    monkeypatch.delenv(DATA_ROOT_ENV, raising=False)


def write_gray_png(path, values):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(values)).save(path)


def make_png_dataset(root, count=3, size=(40, 32), with_heart=False, seed=0):
    """
    Tiny Montgomery-style dataset on disk: grayscale images plus one
    {0, 255} mask per organ, left lung on the image's right half.
    """
    rng = np.random.default_rng(seed)
    h, w = size
    mask_dirs = {"left_lung": "masks/left", "right_lung": "masks/right"}
    if with_heart:
        mask_dirs["heart"] = "masks/heart"

    for i in range(count):
        stem = f"case_{i:02d}"
        write_gray_png(root / "images" / f"{stem}.png", rng.integers(0, 255, size=(h, w), dtype=np.uint8))

        left = np.zeros((h, w), dtype=np.uint8)
        left[h // 4: 3 * h // 4, w // 2 + 2: w - 2] = 255
        right = np.zeros((h, w), dtype=np.uint8)
        right[h // 4: 3 * h // 4, 2: w // 2 - 2] = 255
        write_gray_png(root / mask_dirs["left_lung"] / f"{stem}.png", left)
        write_gray_png(root / mask_dirs["right_lung"] / f"{stem}.png", right)
        if with_heart:
            heart = np.zeros((h, w), dtype=np.uint8)
            heart[h // 2: h - 2, w // 2 - 4: w // 2 + 4] = 255
            write_gray_png(root / mask_dirs["heart"] / f"{stem}.png", heart)

    return DatasetLayout(
        name="tiny",
        root=str(root),
        image_dir="images",
        image_format="png",
        image_glob="*.png",
        mask_dirs=mask_dirs,
        mask_glob="{stem}.png",
        heart_annotated=with_heart,
        dev_count=max(1, count - 1),
    )


@pytest.fixture
def png_dataset(tmp_path):
    return make_png_dataset(tmp_path / "tiny")


@pytest.fixture
def png_dataset_with_heart(tmp_path):
    return make_png_dataset(tmp_path / "tiny_heart", with_heart=True)
