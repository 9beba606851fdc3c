"""Export a patch-embedding archive from an MVTec-style dataset directory.

Usage:
    patchguard-export --dataset-root /data/mvtec --class hazelnut \
        --backbone deit_base --layers 7,12 --out hazelnut_deit.pea
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from patchguard.archive import EmbeddingDataset, PatchGrid, Sample, write_archive

from .backbones import BackboneError, extract_grids, load_backbone
from .dataset import DatasetLayoutError, scan_dataset
from .preprocess import apply_stats, compute_stats, load_image, load_mask


def backbone_tag(backbone, layers):
    """Backbone identity recorded in the archive, including the layer
    selection and the weight provenance."""
    layer_part = f"[{','.join(map(str, layers))}]" if layers else ""
    return f"{backbone.name}{layer_part}({backbone.weight_note})"


def export(dataset_root, class_name, backbone_id, layers=None, out_path=None,
           batch_size=8):
    """Run the frozen backbone over every image of one class and write the
    archive. Returns the written EmbeddingDataset."""
    backbone = load_backbone(backbone_id, layers=layers)
    entries = scan_dataset(dataset_root, class_name)

    images = {e.id: load_image(e.path) for e in entries}
    stats = compute_stats([images[e.id] for e in entries if e.split == "train"])
    for key in images:
        images[key] = apply_stats(images[key], stats)

    per_entry_grids = {}
    for start in range(0, len(entries), batch_size):
        chunk = entries[start : start + batch_size]
        batch = np.stack([images[e.id] for e in chunk])
        grids = extract_grids(backbone, batch)
        for i, entry in enumerate(chunk):
            per_entry_grids[entry.id] = [g[i] for g in grids]

    train, test = [], []
    for entry in entries:
        mask = load_mask(entry.mask_path) if entry.mask_path else None
        sample = Sample(entry.id, [PatchGrid(g) for g in per_entry_grids[entry.id]],
                        label=entry.label, mask=mask)
        (train if entry.split == "train" else test).append(sample)

    dataset = EmbeddingDataset(backbone=backbone_tag(backbone, layers),
                               scales=list(backbone.scales),
                               train=train, test=test)
    dataset.validate()
    if out_path is not None:
        write_archive(dataset, out_path)
    return dataset


def _parse_layers(text):
    if not text:
        return None
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise BackboneError(f"--layers expects comma-separated integers, got '{text}'")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="patchguard-export",
        description="Export patch-embedding archives from a frozen vision "
                    "backbone over an MVTec-style dataset.",
    )
    parser.add_argument("--dataset-root", required=True)
    parser.add_argument("--class", dest="class_name", required=True)
    parser.add_argument("--backbone", required=True,
                        choices=["deit_base", "esvit_swin_t",
                                 "efficientformer_l3", "resnet50"])
    parser.add_argument("--layers", default=None,
                        help="comma-separated layer selection, e.g. 7,12")
    parser.add_argument("--out", required=True)
    parser.add_argument("--batch-size", type=int, default=8)
    args = parser.parse_args(argv)

    try:
        dataset = export(args.dataset_root, args.class_name, args.backbone,
                         layers=_parse_layers(args.layers), out_path=args.out,
                         batch_size=args.batch_size)
    except (BackboneError, DatasetLayoutError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {args.out}: backbone {dataset.backbone}, "
          f"scales {dataset.scales}, {len(dataset.train)} train / "
          f"{len(dataset.test)} test samples")
    return 0


if __name__ == "__main__":
    sys.exit(main())
