"""Unsupervised anomaly detection over patch-embedding grids.

Two density-estimation heads (a mixture-density network and an affine
coupling normalizing flow) are trained on normal samples only, score each
patch by negative log-likelihood and turn the score grids into pixel-level
anomaly maps and image-level decisions.
"""

from .archive import (
    EmbeddingDataset,
    PatchGrid,
    Sample,
    SplitSpec,
    load_archive,
    split_train_val,
    write_archive,
)
from .flow import FlowConfig, FlowHead, FlowOutput, flow_forward, flow_inverse, flow_nll, init_flow
from .gmm import GmmConfig, GmmHead, MixtureParams, gmm_forward, gmm_nll, gmm_patch_scores, init_gmm
from .metrics import MetricsReport, auroc, connected_components, pixel_auroc, prauc, pro_score
from .pipeline import build_bundle, compute_maps, evaluate
from .scoring import AnomalyMap, Threshold, classify, fuse_scales, normalize_batch, select_threshold, upsample_bilinear
from .toydata import make_toy_dataset
from .training import HeadBundle, TrainConfig, TrainHistory, adam_step, load_run, save_run, train

__version__ = "0.1.0"

__all__ = [
    "EmbeddingDataset", "PatchGrid", "Sample", "SplitSpec",
    "load_archive", "write_archive", "split_train_val",
    "GmmConfig", "GmmHead", "MixtureParams",
    "init_gmm", "gmm_forward", "gmm_nll", "gmm_patch_scores",
    "FlowConfig", "FlowHead", "FlowOutput",
    "init_flow", "flow_forward", "flow_inverse", "flow_nll",
    "TrainConfig", "TrainHistory", "HeadBundle",
    "adam_step", "train", "save_run", "load_run",
    "AnomalyMap", "Threshold",
    "normalize_batch", "upsample_bilinear", "fuse_scales",
    "select_threshold", "classify",
    "MetricsReport", "auroc", "prauc", "pixel_auroc",
    "connected_components", "pro_score",
    "build_bundle", "compute_maps", "evaluate",
    "make_toy_dataset",
]
