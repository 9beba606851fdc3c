"""MVTec-style dataset tree walking.

Expected layout under `root/class_name`:
    train/good/*.png
    test/<defect or good>/*.png
    ground_truth/<defect>/<stem>_mask.png   (optional per defect image)
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")


class DatasetLayoutError(Exception):
    pass


@dataclass
class ImageEntry:
    id: str
    path: Path
    split: str  # "train" or "test"
    label: int
    mask_path: Path | None = None


def _images_in(directory):
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower() in IMAGE_EXTENSIONS)


def _find_mask(gt_dir, defect, stem):
    if gt_dir is None:
        return None
    candidates = [gt_dir / defect / f"{stem}_mask.png",
                  gt_dir / defect / f"{stem}.png"]
    for c in candidates:
        if c.exists():
            return c
    return None


def scan_dataset(root, class_name) -> list[ImageEntry]:
    """All train and test images of one class, sorted for determinism."""
    base = Path(root) / class_name
    train_good = base / "train" / "good"
    test_dir = base / "test"
    if not train_good.is_dir() or not test_dir.is_dir():
        raise DatasetLayoutError(
            f"{base} does not look like an MVTec-style class directory "
            "(need train/good and test)"
        )
    gt_dir = base / "ground_truth"
    gt_dir = gt_dir if gt_dir.is_dir() else None

    entries = [ImageEntry(id=f"train/good/{p.stem}", path=p, split="train",
                          label=0)
               for p in _images_in(train_good)]
    for defect_dir in sorted(d for d in test_dir.iterdir() if d.is_dir()):
        defect = defect_dir.name
        anomalous = defect != "good"
        for p in _images_in(defect_dir):
            entries.append(ImageEntry(
                id=f"test/{defect}/{p.stem}", path=p, split="test",
                label=1 if anomalous else 0,
                mask_path=_find_mask(gt_dir, defect, p.stem) if anomalous
                else None,
            ))
    if not any(e.split == "train" for e in entries):
        raise DatasetLayoutError(f"no training images under {train_good}")
    return entries
