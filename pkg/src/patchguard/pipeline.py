"""Glue between heads, scoring and metrics: build per-scale head bundles,
turn test samples into anomaly maps and compute a metrics report."""

from __future__ import annotations

import numpy as np

from .archive import EmbeddingDataset
from .errors import ConfigError
from .flow import FlowConfig, flow_forward, flow_nll, init_flow
from .gmm import GmmConfig, gmm_patch_scores, init_gmm
from .metrics import compute_report
from .scoring import AnomalyMap, fuse_scales, normalize_batch, upsample_bilinear
from .training import HeadBundle


def default_num_gaussians(n_scales):
    # multi-scale CNN features get the smaller mixture
    return 50 if n_scales > 1 else 100


def default_num_steps(n_scales):
    return 8 if n_scales > 1 else 20


def build_bundle(kind, scales, seed=0, num_gaussians=None, num_steps=None,
                 hidden_ratio=0.16, clamp_alpha=1.9) -> HeadBundle:
    """One freshly initialized head per scale; per-scale seed is seed + index."""
    heads = []
    for i, (h, w, d) in enumerate(scales):
        if kind == "gmm":
            k = num_gaussians if num_gaussians is not None else default_num_gaussians(len(scales))
            heads.append(init_gmm(GmmConfig(embedding_dim=d, num_gaussians=k,
                                            init_seed=seed + i)))
        elif kind == "nf":
            steps = num_steps if num_steps is not None else default_num_steps(len(scales))
            heads.append(init_flow(FlowConfig(embedding_dim=d, grid=(h, w),
                                              num_steps=steps,
                                              hidden_ratio=hidden_ratio,
                                              clamp_alpha=clamp_alpha,
                                              init_seed=seed + i)))
        else:
            raise ConfigError(f"unknown head kind '{kind}'")
    return HeadBundle(kind, heads)


def check_bundle_matches(bundle: HeadBundle, dataset: EmbeddingDataset):
    if len(bundle.heads) != len(dataset.scales):
        raise ConfigError(
            f"checkpoint has {len(bundle.heads)} heads but archive declares "
            f"{len(dataset.scales)} scales"
        )
    for head, (h, w, d) in zip(bundle.heads, dataset.scales):
        expected = head.config.embedding_dim
        if expected != d:
            raise ConfigError(
                f"head expects embedding dim {expected}, archive scale has {d}"
            )


def raw_score_map(head, kind, grid) -> np.ndarray:
    """Per-patch NLL map (H, W) from either head kind."""
    if kind == "gmm":
        return gmm_patch_scores(head, grid)
    return flow_nll(flow_forward(head, grid))


def compute_maps(bundle: HeadBundle, samples, scale_index=None, batch_size=None):
    """Anomaly maps for a list of samples.

    Per scale: raw NLL maps are min-max normalized over the whole set (or over
    chunks of `batch_size` when given), complemented to anomaly scores,
    bilinearly upsampled to 224x224 and finally averaged across scales. The
    image score is the maximum of the fused map. `scale_index` restricts the
    evaluation to a single archive scale (alternate-embedding selection).
    """
    if not samples:
        return []
    scale_ids = range(len(bundle.heads)) if scale_index is None else [scale_index]
    per_scale_maps = []
    for si in scale_ids:
        head = bundle.heads[si]
        raw = [raw_score_map(head, bundle.kind, s.grids[si]) for s in samples]
        normed = []
        chunk = len(raw) if batch_size is None else batch_size
        for start in range(0, len(raw), chunk):
            normed.extend(normalize_batch(raw[start : start + chunk]))
        per_scale_maps.append([upsample_bilinear(m) for m in normed])
    fused = [fuse_scales([per_scale_maps[j][i] for j in range(len(per_scale_maps))])
             for i in range(len(samples))]
    return [AnomalyMap.from_scores(np.clip(m, 0.0, 1.0)) for m in fused]


def evaluate(bundle: HeadBundle, dataset: EmbeddingDataset, scale_index=None,
             batch_size=None, max_fpr=0.3):
    """Score the test split and compute the metrics report."""
    check_bundle_matches(bundle, dataset)
    maps = compute_maps(bundle, dataset.test, scale_index=scale_index,
                        batch_size=batch_size)
    labels = [s.label for s in dataset.test]
    masks = [s.mask for s in dataset.test]
    image_scores = [m.image_score for m in maps]
    report = compute_report(image_scores, labels, maps, masks, max_fpr=max_fpr)
    return maps, report
