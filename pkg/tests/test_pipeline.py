import numpy as np
import pytest

from patchguard.archive import PatchGrid, Sample
from patchguard.errors import ConfigError
from patchguard.pipeline import (
    build_bundle,
    check_bundle_matches,
    compute_maps,
    default_num_gaussians,
    default_num_steps,
    evaluate,
    raw_score_map,
)
from patchguard.toydata import make_toy_dataset


def test_default_sizes():
    assert default_num_gaussians(1) == 100
    assert default_num_gaussians(3) == 50
    assert default_num_steps(1) == 20
    assert default_num_steps(3) == 8


def test_build_bundle_per_scale_seeds_differ():
    bundle = build_bundle("gmm", [(2, 2, 3), (2, 2, 3)], seed=0, num_gaussians=2)
    assert not np.array_equal(bundle.heads[0].params["pi_w"],
                              bundle.heads[1].params["pi_w"])


def test_build_bundle_unknown_kind():
    with pytest.raises(ConfigError):
        build_bundle("svm", [(2, 2, 3)])


def test_check_bundle_matches():
    bundle = build_bundle("gmm", [(2, 2, 3)], num_gaussians=2)
    ds = make_toy_dataset(seed=0, embedding_dim=3, grid=2, n_train=4, n_test=2,
                          block=1)
    check_bundle_matches(bundle, ds)
    wrong_dim = make_toy_dataset(seed=0, embedding_dim=4, grid=2, n_train=4,
                                 n_test=2, block=1)
    with pytest.raises(ConfigError):
        check_bundle_matches(bundle, wrong_dim)
    two_heads = build_bundle("gmm", [(2, 2, 3), (2, 2, 3)], num_gaussians=2)
    with pytest.raises(ConfigError):
        check_bundle_matches(two_heads, ds)


def test_raw_score_map_shapes(rng):
    grid = PatchGrid(rng.normal(size=(3, 4, 2)).astype(np.float32))
    gmm = build_bundle("gmm", [(3, 4, 2)], num_gaussians=2).heads[0]
    nf = build_bundle("nf", [(3, 4, 2)], num_steps=2).heads[0]
    assert raw_score_map(gmm, "gmm", grid).shape == (3, 4)
    assert raw_score_map(nf, "nf", grid).shape == (3, 4)


def test_compute_maps_range_and_score(rng):
    bundle = build_bundle("gmm", [(2, 2, 3)], num_gaussians=2)
    samples = [Sample(f"s{i}", [PatchGrid(rng.normal(size=(2, 2, 3))
                                          .astype(np.float32))])
               for i in range(4)]
    maps = compute_maps(bundle, samples)
    assert len(maps) == 4
    for m in maps:
        assert m.scores.shape == (224, 224)
        assert m.scores.min() >= 0.0 and m.scores.max() <= 1.0
        assert m.image_score == pytest.approx(float(m.scores.max()))


def test_compute_maps_empty():
    bundle = build_bundle("gmm", [(2, 2, 3)], num_gaussians=2)
    assert compute_maps(bundle, []) == []


def test_compute_maps_scale_index_selects_one_scale(rng):
    bundle = build_bundle("gmm", [(2, 2, 3), (2, 2, 3)], num_gaussians=2)
    samples = [Sample(f"s{i}",
                      [PatchGrid(rng.normal(size=(2, 2, 3)).astype(np.float32)),
                       PatchGrid(rng.normal(size=(2, 2, 3)).astype(np.float32))])
               for i in range(3)]
    fused = compute_maps(bundle, samples)
    only0 = compute_maps(bundle, samples, scale_index=0)
    only1 = compute_maps(bundle, samples, scale_index=1)
    # the fused map is the mean of the per-scale maps
    for f, a, b in zip(fused, only0, only1):
        mean = np.clip((a.scores.astype(np.float64)
                        + b.scores.astype(np.float64)) / 2, 0, 1)
        assert np.allclose(f.scores, mean, atol=1e-6)


def test_compute_maps_per_batch_normalization(rng):
    bundle = build_bundle("gmm", [(2, 2, 3)], num_gaussians=2)
    samples = [Sample(f"s{i}", [PatchGrid(rng.normal(size=(2, 2, 3))
                                          .astype(np.float32))])
               for i in range(4)]
    whole = compute_maps(bundle, samples)
    per2 = compute_maps(bundle, samples, batch_size=2)
    # each chunk of 2 is normalized on its own, so the chunk containing the
    # global extremes agrees with whole-set normalization only by accident
    assert any(not np.allclose(a.scores, b.scores)
               for a, b in zip(whole, per2))


def test_evaluate_toy():
    ds = make_toy_dataset(seed=3, embedding_dim=4, grid=4, n_train=10, n_test=6)
    bundle = build_bundle("gmm", [(4, 4, 4)], num_gaussians=2)
    maps, report = evaluate(bundle, ds)
    assert len(maps) == 6
    assert report.image_auroc is not None
    assert report.pro_score is not None
