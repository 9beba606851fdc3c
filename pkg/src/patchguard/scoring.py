"""From raw per-patch NLL maps to anomaly maps, pseudo-probabilities,
image-level scores and multi-scale fusion."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionMismatchError, PatchguardError

TARGET_SIZE = 224


@dataclass
class AnomalyMap:
    """Pixel anomaly scores in [0, 1] plus the image-level score (their max)."""

    scores: np.ndarray  # (224, 224) float32 in [0, 1]
    image_score: float

    @classmethod
    def from_scores(cls, scores):
        scores = np.asarray(scores, dtype=np.float32)
        return cls(scores=scores, image_score=float(scores.max()))


@dataclass
class Threshold:
    value: float
    strategy: str  # "quantile(q)" or "max"
    source: str = ""


def normalize_batch(raw_maps):
    """Min-max normalize log-likelihoods over the whole set; return a = 1 - p.

    p = (ll - min) / (max - min) with ll = -NLL, so high NLL maps to anomaly
    score 1. A degenerate set (max == min) maps to a == 0 everywhere.
    """
    if not raw_maps:
        raise PatchguardError("normalize_batch needs at least one map")
    lls = [-np.asarray(m, dtype=np.float64) for m in raw_maps]
    lo = min(ll.min() for ll in lls)
    hi = max(ll.max() for ll in lls)
    if hi == lo:
        return [np.zeros_like(ll) for ll in lls]
    return [1.0 - (ll - lo) / (hi - lo) for ll in lls]


def upsample_bilinear(map2d, target=TARGET_SIZE):
    """Bilinear upsampling with half-pixel source coordinates.

    Source coordinate of destination pixel i is (i + 0.5) * (H / target) - 0.5,
    clamped to the valid range; constant inputs stay exactly constant.
    """
    arr = np.asarray(map2d, dtype=np.float64)
    h, w = arr.shape

    def axis_coords(n_src, n_dst):
        src = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
        src = np.clip(src, 0.0, n_src - 1.0)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_src - 1)
        frac = src - i0
        return i0, i1, frac

    r0, r1, rf = axis_coords(h, target)
    c0, c1, cf = axis_coords(w, target)
    top = arr[np.ix_(r0, c0)] * (1 - cf) + arr[np.ix_(r0, c1)] * cf
    bot = arr[np.ix_(r1, c0)] * (1 - cf) + arr[np.ix_(r1, c1)] * cf
    return top * (1 - rf[:, None]) + bot * rf[:, None]


def fuse_scales(maps):
    """Element-wise mean of per-scale anomaly maps."""
    if not maps:
        raise PatchguardError("fuse_scales needs at least one map")
    arrays = [np.asarray(m, dtype=np.float64) for m in maps]
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise DimensionMismatchError(
                f"cannot fuse maps of shapes {shape} and {a.shape}"
            )
    return np.mean(arrays, axis=0)


def select_threshold(val_scores, strategy="quantile", q=0.99, source=""):
    """Pick the decision threshold from validation image scores."""
    scores = np.asarray(val_scores, dtype=np.float64)
    if scores.size == 0:
        raise PatchguardError("select_threshold needs at least one score")
    if strategy == "max":
        return Threshold(value=float(scores.max()), strategy="max", source=source)
    if strategy == "quantile":
        value = float(np.quantile(scores, q, method="linear"))
        return Threshold(value=value, strategy=f"quantile({q})", source=source)
    raise PatchguardError(f"unknown threshold strategy '{strategy}'")


def classify(image_score, threshold: Threshold) -> int:
    """1 (anomalous) iff the score strictly exceeds the threshold."""
    return 1 if image_score > threshold.value else 0


# ---------------------------------------------------------------------------
# export


def export_maps(maps, ids, labels, predictions, out_dir) -> None:
    """Write one 8-bit grayscale PNG per map (score*255, rounding half up)
    plus a scores.csv with (id, image_score, label, prediction)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for amap, sid in zip(maps, ids):
        pixels = np.floor(np.asarray(amap.scores, dtype=np.float64) * 255.0 + 0.5)
        img = Image.fromarray(np.clip(pixels, 0, 255).astype(np.uint8), mode="L")
        img.save(out / f"{sid}.png")
    write_scores_csv(maps, ids, labels, predictions, out / "scores.csv")


def write_scores_csv(maps, ids, labels, predictions, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "image_score", "label", "prediction"])
        for amap, sid, label, pred in zip(maps, ids, labels, predictions):
            writer.writerow([sid, repr(float(amap.image_score)), label, pred])
