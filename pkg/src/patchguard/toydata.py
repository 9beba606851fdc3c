"""Synthetic embedding datasets for demos, tests and the acceptance suite.

Normal patches are drawn from a fixed Gaussian mixture; anomalous test
samples carry a contiguous block of patches shifted by a multiple of the
component scale, with the matching pixel mask at 224x224.
"""

from __future__ import annotations

import numpy as np

from .archive import (
    LABEL_ANOMALOUS,
    LABEL_NORMAL,
    MASK_SIZE,
    EmbeddingDataset,
    PatchGrid,
    Sample,
)


def make_toy_dataset(seed=0, embedding_dim=16, grid=8, n_train=200, n_test=40,
                     n_components=3, sigma=0.5, block=3, shift_sigmas=4.0,
                     backbone="toy") -> EmbeddingDataset:
    """Build the standard synthetic benchmark dataset.

    Half of the test samples are anomalous: a `block` x `block` patch region
    is shifted by `shift_sigmas` * sigma along a fixed direction.
    """
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, 1.0, size=(n_components, embedding_dim))
    direction = rng.normal(0.0, 1.0, size=embedding_dim)
    direction /= np.linalg.norm(direction)
    shift = shift_sigmas * sigma * direction

    def sample_grid():
        comps = rng.integers(0, n_components, size=(grid, grid))
        noise = rng.normal(0.0, sigma, size=(grid, grid, embedding_dim))
        return (means[comps] + noise).astype(np.float32)

    train = [Sample(f"train_{i:03d}", [PatchGrid(sample_grid())])
             for i in range(n_train)]

    test = []
    n_anomalous = n_test // 2
    for i in range(n_test):
        data = sample_grid()
        if i < n_anomalous:
            r = int(rng.integers(0, grid - block + 1))
            c = int(rng.integers(0, grid - block + 1))
            data[r : r + block, c : c + block] += shift.astype(np.float32)
            mask = np.zeros((MASK_SIZE, MASK_SIZE), dtype=np.uint8)
            px = MASK_SIZE // grid
            mask[r * px : (r + block) * px, c * px : (c + block) * px] = 1
            test.append(Sample(f"test_anom_{i:03d}", [PatchGrid(data)],
                               label=LABEL_ANOMALOUS, mask=mask))
        else:
            test.append(Sample(f"test_good_{i:03d}", [PatchGrid(data)],
                               label=LABEL_NORMAL))

    dataset = EmbeddingDataset(backbone=backbone,
                               scales=[(grid, grid, embedding_dim)],
                               train=train, test=test)
    dataset.validate()
    return dataset


def make_random_dataset(rng, n_scales=1, max_grid=4, max_dim=6,
                        n_train=3, n_test=2) -> EmbeddingDataset:
    """Small random but valid dataset, for round-trip style tests."""
    scales = []
    for _ in range(n_scales):
        h = int(rng.integers(1, max_grid + 1))
        w = int(rng.integers(1, max_grid + 1))
        d = int(rng.integers(1, max_dim + 1))
        scales.append((h, w, d))

    def grids():
        return [PatchGrid(rng.normal(size=(h, w, d)).astype(np.float32))
                for h, w, d in scales]

    train = [Sample(f"tr{i}", grids()) for i in range(n_train)]
    test = []
    for i in range(n_test):
        anomalous = bool(rng.integers(0, 2))
        mask = None
        if anomalous and rng.integers(0, 2):
            mask = (rng.random((MASK_SIZE, MASK_SIZE)) < 0.01).astype(np.uint8)
        test.append(Sample(f"te{i}", grids(),
                           label=LABEL_ANOMALOUS if anomalous else LABEL_NORMAL,
                           mask=mask))
    dataset = EmbeddingDataset(backbone="random", scales=scales,
                               train=train, test=test)
    dataset.validate()
    return dataset
