"""Image loading and normalization: 224x224 bilinear resize, grayscale
replication to three channels, and per-channel min-max scaling with statistics
computed on the training images only."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

IMAGE_SIZE = 224


@dataclass
class ChannelStats:
    minimum: np.ndarray  # (3,)
    maximum: np.ndarray  # (3,)


def load_image(path) -> np.ndarray:
    """Image file -> (224, 224, 3) float32 in [0, 1], bilinear resized."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        img = img.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
        return np.asarray(img, dtype=np.float32) / 255.0


def load_mask(path) -> np.ndarray:
    """Ground-truth mask -> (224, 224) uint8 in {0, 1}, nearest resized."""
    with Image.open(path) as img:
        img = img.convert("L")
        img = img.resize((IMAGE_SIZE, IMAGE_SIZE), Image.NEAREST)
        return (np.asarray(img) > 0).astype(np.uint8)


def compute_stats(images) -> ChannelStats:
    """Per-channel min and max over a list of (H, W, 3) training images."""
    minimum = np.full(3, np.inf)
    maximum = np.full(3, -np.inf)
    for img in images:
        minimum = np.minimum(minimum, img.reshape(-1, 3).min(axis=0))
        maximum = np.maximum(maximum, img.reshape(-1, 3).max(axis=0))
    return ChannelStats(minimum=minimum.astype(np.float32),
                        maximum=maximum.astype(np.float32))


def apply_stats(image, stats: ChannelStats) -> np.ndarray:
    """Scale each channel to [0, 1] using the training-set extremes; a
    constant channel maps to 0."""
    span = stats.maximum - stats.minimum
    span = np.where(span > 0, span, 1.0)
    return ((image - stats.minimum) / span).astype(np.float32)
