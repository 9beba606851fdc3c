"""Evaluation metrics: image/pixel AUROC, PRAUC and the per-region-overlap
score integrated up to 30% false positive rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import UndefinedMetricError

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass
class Region:
    """One 8-connected component of a ground-truth mask (flat pixel indices)."""

    pixels: np.ndarray  # flat indices into the mask/map
    shape: tuple

    def __len__(self):
        return len(self.pixels)


@dataclass
class MetricsReport:
    image_auroc: float | None
    prauc: float | None
    pixel_auroc: float | None
    pro_score: float | None
    threshold_count: int = 0


def _scored_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(int)
    if s.shape != y.shape:
        raise UndefinedMetricError("scores and labels must have equal length")
    return s, y


def _roc_points(s, y):
    """Cumulative (fp, tp) after each distinct-score tie group, descending."""
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # indices where a new tie group ends
    boundaries = np.nonzero(np.diff(s_sorted))[0]
    ends = np.append(boundaries, len(s_sorted) - 1)
    tp = np.cumsum(y_sorted)[ends]
    fp = np.cumsum(1 - y_sorted)[ends]
    return fp, tp


def auroc(scores, labels) -> float:
    """Area under the ROC curve via a tie-grouped trapezoidal sweep.

    Equals the Mann-Whitney statistic P(s+ > s-) + 0.5 P(tie).
    """
    s, y = _scored_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes present")
    fp, tp = _roc_points(s, y)
    fp = np.concatenate([[0], fp])
    tp = np.concatenate([[0], tp])
    area = np.sum(np.diff(fp) * (tp[1:] + tp[:-1]) / 2.0)
    return float(area / (n_pos * n_neg))


def prauc(scores, labels) -> float:
    """Average precision: step-wise sum of precision at each recall increment."""
    s, y = _scored_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("PRAUC needs at least one positive")
    fp, tp = _roc_points(s, y)
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(np.sum((recall - prev_recall) * precision))


def pixel_auroc(maps, masks) -> float:
    """AUROC over the pooled pixel population of all test images.

    Masks of normal images may be given as None (treated as all-zero).
    """
    scores, labels = [], []
    for amap, mask in zip(maps, masks):
        arr = np.asarray(getattr(amap, "scores", amap), dtype=np.float64)
        scores.append(arr.ravel())
        if mask is None:
            labels.append(np.zeros(arr.size, dtype=int))
        else:
            labels.append(np.asarray(mask).ravel().astype(int))
    return auroc(np.concatenate(scores), np.concatenate(labels))


def connected_components(mask) -> list:
    """8-connected components of a binary mask, ordered by their first pixel
    in row-major order."""
    arr = np.asarray(mask) != 0
    labelled, n = ndimage.label(arr, structure=_EIGHT_CONNECTED)
    flat = labelled.ravel()
    regions = []
    for lab in range(1, n + 1):
        pixels = np.nonzero(flat == lab)[0]
        regions.append(Region(pixels=pixels, shape=arr.shape))
    regions.sort(key=lambda r: int(r.pixels[0]))
    return regions


MAX_DISTINCT_THRESHOLDS = 4096
QUANTILE_GRID_SIZE = 512


def _pro_thresholds(all_scores, sweep_size):
    distinct = np.unique(all_scores)
    if distinct.size <= MAX_DISTINCT_THRESHOLDS:
        return distinct[::-1]
    grid = np.quantile(all_scores, np.linspace(0.0, 1.0, sweep_size))
    return np.unique(grid)[::-1]


def pro_score(maps, masks, max_fpr=0.3, sweep_size=QUANTILE_GRID_SIZE):
    """Area under the PRO-vs-FPR curve up to max_fpr, normalized by max_fpr.

    The sweep walks all distinct observed scores (quantile grid past 4096
    values); pixels count as detected when their score strictly exceeds the
    threshold. Each FPR increment is credited with the overlap reached at its
    own threshold, so a curve that jumps from the origin straight to (1, 1)
    integrates to 1. Returns (score, threshold_count).
    """
    score_arrays = [np.asarray(getattr(m, "scores", m), dtype=np.float64).ravel()
                    for m in maps]
    regions = []  # (map index, region)
    neg_parts = []
    for i, mask in enumerate(masks):
        if mask is None:
            neg_parts.append(score_arrays[i])
            continue
        arr = np.asarray(mask) != 0
        for region in connected_components(arr):
            regions.append((i, region))
        neg_parts.append(score_arrays[i][~arr.ravel()])
    if not regions:
        raise UndefinedMetricError("PRO needs at least one anomalous region")
    neg_scores = np.sort(np.concatenate(neg_parts))
    if neg_scores.size == 0:
        raise UndefinedMetricError("PRO needs at least one negative pixel")

    thresholds = _pro_thresholds(np.concatenate(score_arrays), sweep_size)
    region_scores = [np.sort(score_arrays[i][r.pixels]) for i, r in regions]
    region_sizes = np.array([len(r) for _, r in regions], dtype=np.float64)

    # counts of values strictly greater than each threshold
    def frac_above(sorted_vals, ts):
        return (len(sorted_vals) - np.searchsorted(sorted_vals, ts, side="right"))

    fpr = frac_above(neg_scores, thresholds) / neg_scores.size
    pro = np.zeros_like(fpr)
    for vals, size in zip(region_scores, region_sizes):
        pro += frac_above(vals, thresholds) / size
    pro /= len(regions)

    # closing point: everything detected below the smallest score
    fpr = np.append(fpr, 1.0)
    pro = np.append(pro, 1.0)

    area = 0.0
    prev_fpr = 0.0
    for f, p in zip(fpr, pro):
        left = min(prev_fpr, max_fpr)
        right = min(f, max_fpr)
        if right > left:
            area += p * (right - left)
        prev_fpr = f
        if prev_fpr >= max_fpr:
            break
    return float(area / max_fpr), len(thresholds)


def compute_report(image_scores, image_labels, maps, masks,
                   max_fpr=0.3, sweep_size=QUANTILE_GRID_SIZE) -> MetricsReport:
    """All four metrics for one evaluation run; undefined ones become None."""
    try:
        img_auroc = auroc(image_scores, image_labels)
    except UndefinedMetricError:
        img_auroc = None
    try:
        ap = prauc(image_scores, image_labels)
    except UndefinedMetricError:
        ap = None
    try:
        px_auroc = pixel_auroc(maps, masks)
    except UndefinedMetricError:
        px_auroc = None
    try:
        pro, n_thresholds = pro_score(maps, masks, max_fpr=max_fpr,
                                      sweep_size=sweep_size)
    except UndefinedMetricError:
        pro, n_thresholds = None, 0
    return MetricsReport(image_auroc=img_auroc, prauc=ap, pixel_auroc=px_auroc,
                         pro_score=pro, threshold_count=n_thresholds)
