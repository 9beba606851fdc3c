import csv

import numpy as np
import pytest
from PIL import Image

from patchguard.errors import DimensionMismatchError, PatchguardError
from patchguard.scoring import (
    AnomalyMap,
    Threshold,
    classify,
    export_maps,
    fuse_scales,
    normalize_batch,
    select_threshold,
    upsample_bilinear,
)


# ---------------------------------------------------------------------------
# normalization


def test_normalize_maps_nll_extremes_to_unit_range():
    # highest NLL across the whole set -> 1, lowest -> 0
    maps = [np.array([[1.0, 3.0]]), np.array([[2.0, 5.0]])]
    out = normalize_batch(maps)
    pooled = np.concatenate([m.ravel() for m in out])
    assert pooled.min() == 0.0 and pooled.max() == 1.0
    assert out[1][0, 1] == 1.0  # NLL 5 is the most anomalous
    assert out[0][0, 0] == 0.0  # NLL 1 is the least
    # linear in between: NLL 3 sits at (3-1)/(5-1)
    assert out[0][0, 1] == pytest.approx(0.5)
    assert out[1][0, 0] == pytest.approx(0.25)


def test_normalize_is_monotone(rng):
    maps = [rng.normal(size=(3, 3)) for _ in range(4)]
    out = normalize_batch(maps)
    pooled_in = np.concatenate([m.ravel() for m in maps])
    pooled_out = np.concatenate([m.ravel() for m in out])
    assert np.array_equal(np.argsort(pooled_in), np.argsort(pooled_out))


def test_normalize_degenerate_set_is_zero():
    out = normalize_batch([np.full((2, 2), 7.0), np.full((2, 2), 7.0)])
    for m in out:
        assert np.all(m == 0.0)


def test_normalize_empty_rejected():
    with pytest.raises(PatchguardError):
        normalize_batch([])


# ---------------------------------------------------------------------------
# upsampling


def test_upsample_2x2_to_4x4_known_values():
    # half-pixel bilinear interpolation of [[0,1],[2,3]] doubled per axis
    expected = np.array([
        [0.0, 0.25, 0.75, 1.0],
        [0.5, 0.75, 1.25, 1.5],
        [1.5, 1.75, 2.25, 2.5],
        [2.0, 2.25, 2.75, 3.0],
    ])
    got = upsample_bilinear(np.array([[0.0, 1.0], [2.0, 3.0]]), target=4)
    assert np.allclose(got, expected, atol=1e-12)


def test_upsample_constant_stays_constant():
    got = upsample_bilinear(np.full((3, 5), 0.4))
    assert got.shape == (224, 224)
    assert np.allclose(got, 0.4, atol=1e-12)


def test_upsample_single_cell():
    got = upsample_bilinear(np.array([[0.7]]), target=8)
    assert np.allclose(got, 0.7, atol=1e-12)


def test_upsample_preserves_range(rng):
    src = rng.random((7, 7))
    got = upsample_bilinear(src)
    assert got.min() >= src.min() - 1e-12
    assert got.max() <= src.max() + 1e-12


def test_upsample_identity_when_same_size(rng):
    src = rng.random((4, 4))
    assert np.allclose(upsample_bilinear(src, target=4), src, atol=1e-12)


def test_upsample_separable_rows_cols():
    # a map constant along rows must stay constant along rows after upsampling
    src = np.tile(np.array([[0.0, 1.0, 0.5]]), (4, 1))
    got = upsample_bilinear(src, target=8)
    assert np.allclose(got, got[0][None, :], atol=1e-12)


# ---------------------------------------------------------------------------
# fusion, thresholding, classification


def test_fuse_mean():
    a = np.array([[0.0, 1.0]])
    b = np.array([[1.0, 0.0]])
    assert np.allclose(fuse_scales([a, b]), 0.5)
    assert np.allclose(fuse_scales([a]), a)


def test_fuse_shape_mismatch():
    with pytest.raises(DimensionMismatchError):
        fuse_scales([np.zeros((2, 2)), np.zeros((3, 3))])


def test_threshold_quantile_known_value():
    scores = np.arange(100) / 100.0  # 0.00 .. 0.99
    t = select_threshold(scores, strategy="quantile", q=0.99)
    assert t.value == pytest.approx(0.9801, abs=1e-12)
    assert t.strategy == "quantile(0.99)"


def test_threshold_max():
    t = select_threshold([0.2, 0.9, 0.4], strategy="max")
    assert t.value == 0.9
    assert t.strategy == "max"


def test_threshold_single_score():
    assert select_threshold([0.3]).value == pytest.approx(0.3)


def test_classify_strict_inequality():
    t = Threshold(value=0.5, strategy="max")
    assert classify(0.5, t) == 0
    assert classify(0.5 + 1e-12, t) == 1
    assert classify(0.4, t) == 0


def test_anomaly_map_image_score_is_max():
    m = AnomalyMap.from_scores(np.array([[0.1, 0.8], [0.3, 0.2]]))
    assert m.image_score == pytest.approx(0.8)


# ---------------------------------------------------------------------------
# export


def test_export_maps_pngs_and_csv(tmp_path):
    scores = np.zeros((224, 224), dtype=np.float32)
    scores[10, 20] = 1.0
    scores[0, 0] = 0.5
    maps = [AnomalyMap.from_scores(scores),
            AnomalyMap.from_scores(np.zeros((224, 224), dtype=np.float32))]
    export_maps(maps, ["anom", "good"], [1, 0], [1, 0], tmp_path)

    img = np.asarray(Image.open(tmp_path / "anom.png"))
    assert img.shape == (224, 224) and img.dtype == np.uint8
    assert img[10, 20] == 255
    assert img[0, 0] == 128  # floor(0.5 * 255 + 0.5)
    assert img[5, 5] == 0

    with open(tmp_path / "scores.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["id", "image_score", "label", "prediction"]
    assert rows[1][0] == "anom" and rows[1][2] == "1" and rows[1][3] == "1"
    assert float(rows[1][1]) == pytest.approx(1.0)
    assert rows[2][0] == "good" and rows[2][3] == "0"


def test_export_map_quantization_round_trips(tmp_path, rng):
    scores = rng.random((224, 224)).astype(np.float32)
    export_maps([AnomalyMap.from_scores(scores)], ["x"], [0], [0], tmp_path)
    img = np.asarray(Image.open(tmp_path / "x.png")).astype(np.float64)
    assert np.all(np.abs(img - scores * 255.0) <= 0.5 + 1e-6)
