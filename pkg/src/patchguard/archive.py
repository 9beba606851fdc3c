"""Patch-embedding archive format, dataset model and the normal/val split.

The archive (extension ``.pea``) is a self-contained little-endian binary
container so that feature extraction and model training can live in separate
processes (or machines) with no deep-learning dependency on this side.

Layout::

    magic 'PEA1' | u32 version=1
    u32 name_len | backbone name (utf-8)
    u32 n_scales | per scale: u32 H, u32 W, u32 D
    u32 n_samples
    per sample:
        u32 id_len | id (utf-8)
        u8 split_tag (0=train, 1=test)
        u8 label     (0=normal, 1=anomalous)
        u8 has_mask
        per scale: H*W*D float32 payload (row-major h, w, c)
        if has_mask: 224*224 uint8 payload (0/1)
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CannotSplitError,
    CorruptHeaderError,
    DimensionMismatchError,
    NonFiniteValueError,
    TruncatedPayloadError,
)

MAGIC = b"PEA1"
VERSION = 1
MASK_SIZE = 224

LABEL_NORMAL = 0
LABEL_ANOMALOUS = 1


@dataclass
class PatchGrid:
    """One image's H x W x D feature tensor from a frozen backbone."""

    data: np.ndarray  # float32, shape (H, W, D)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]

    def validate(self, sample_id=""):
        if self.data.ndim != 3:
            raise DimensionMismatchError(
                f"grid of sample '{sample_id}' must be 3-d, got shape {self.data.shape}"
            )
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteValueError(
                f"non-finite value in grid of sample '{sample_id}'"
            )


@dataclass
class Sample:
    id: str
    grids: list  # list[PatchGrid], one per scale
    label: int = LABEL_NORMAL
    mask: np.ndarray | None = None  # uint8 (224, 224), 0/1

    def validate(self):
        for g in self.grids:
            g.validate(self.id)
        if self.mask is not None:
            if self.mask.shape != (MASK_SIZE, MASK_SIZE):
                raise DimensionMismatchError(
                    f"mask of sample '{self.id}' must be {MASK_SIZE}x{MASK_SIZE}, "
                    f"got {self.mask.shape}"
                )


@dataclass
class EmbeddingDataset:
    """Normal-only train split plus a mixed test split of patch grids."""

    backbone: str
    scales: list  # list[(H, W, D)]
    train: list = field(default_factory=list)  # list[Sample]
    test: list = field(default_factory=list)
    image_size: int = MASK_SIZE

    def validate(self):
        if len(self.scales) < 1:
            raise DimensionMismatchError("dataset must declare at least one scale")
        for sample in self.train:
            if sample.label != LABEL_NORMAL:
                raise DimensionMismatchError(
                    f"train sample '{sample.id}' is not labelled normal"
                )
            if sample.mask is not None:
                raise DimensionMismatchError(
                    f"train sample '{sample.id}' must not carry a mask"
                )
        for sample in self.train + self.test:
            sample.validate()
            if len(sample.grids) != len(self.scales):
                raise DimensionMismatchError(
                    f"sample '{sample.id}' has {len(sample.grids)} grids, "
                    f"expected {len(self.scales)}"
                )
            for grid, (h, w, d) in zip(sample.grids, self.scales):
                if grid.data.shape != (h, w, d):
                    raise DimensionMismatchError(
                        f"sample '{sample.id}' grid shape {grid.data.shape} does not "
                        f"match declared scale {(h, w, d)}"
                    )


@dataclass
class SplitSpec:
    """Seeded train/validation partition of the normal samples."""

    seed: int = 0
    train_fraction: float = 0.8

    def validate(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise CannotSplitError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )


# ---------------------------------------------------------------------------
# binary IO


def _write_u32(buf, value):
    buf.write(struct.pack("<I", value))


def _write_str(buf, s):
    raw = s.encode("utf-8")
    _write_u32(buf, len(raw))
    buf.write(raw)


def write_archive(dataset: EmbeddingDataset, path) -> None:
    """Serialize a validated dataset; round-trips bit-exactly via load_archive."""
    dataset.validate()
    buf = io.BytesIO()
    buf.write(MAGIC)
    _write_u32(buf, VERSION)
    _write_str(buf, dataset.backbone)
    _write_u32(buf, len(dataset.scales))
    for h, w, d in dataset.scales:
        buf.write(struct.pack("<III", h, w, d))
    samples = [(0, s) for s in dataset.train] + [(1, s) for s in dataset.test]
    _write_u32(buf, len(samples))
    for tag, sample in samples:
        _write_str(buf, sample.id)
        has_mask = 1 if sample.mask is not None else 0
        buf.write(struct.pack("<BBB", tag, sample.label, has_mask))
        for grid in sample.grids:
            buf.write(np.ascontiguousarray(grid.data, dtype="<f4").tobytes())
        if has_mask:
            buf.write(np.ascontiguousarray(sample.mask, dtype=np.uint8).tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"archive truncated while reading {what} "
                f"(need {n} bytes at offset {self.pos}, have {len(self.data) - self.pos})"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what):
        return self.take(1, what)[0]

    def string(self, what):
        n = self.u32(what + " length")
        return self.take(n, what).decode("utf-8")


def load_archive(path) -> EmbeddingDataset:
    """Load and fully validate a ``.pea`` archive."""
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data)
    if r.take(4, "magic") != MAGIC:
        raise CorruptHeaderError(f"bad magic bytes in {path}, expected {MAGIC!r}")
    version = r.u32("version")
    if version != VERSION:
        raise CorruptHeaderError(f"unsupported archive version {version}")
    backbone = r.string("backbone name")
    n_scales = r.u32("scale count")
    if n_scales < 1:
        raise CorruptHeaderError("archive declares zero scales")
    scales = []
    for _ in range(n_scales):
        h, w, d = struct.unpack("<III", r.take(12, "scale dims"))
        if h < 1 or w < 1 or d < 1:
            raise CorruptHeaderError(f"invalid scale dims {(h, w, d)}")
        scales.append((h, w, d))
    n_samples = r.u32("sample count")
    train, test = [], []
    for _ in range(n_samples):
        sid = r.string("sample id")
        tag = r.u8(f"split tag of '{sid}'")
        label = r.u8(f"label of '{sid}'")
        has_mask = r.u8(f"mask flag of '{sid}'")
        if tag not in (0, 1) or label not in (0, 1) or has_mask not in (0, 1):
            raise CorruptHeaderError(f"invalid sample flags for '{sid}'")
        grids = []
        for h, w, d in scales:
            raw = r.take(h * w * d * 4, f"grid payload of '{sid}'")
            arr = np.frombuffer(raw, dtype="<f4").reshape(h, w, d).copy()
            if not np.all(np.isfinite(arr)):
                raise NonFiniteValueError(
                    f"non-finite value in grid of sample '{sid}'"
                )
            grids.append(PatchGrid(arr))
        mask = None
        if has_mask:
            raw = r.take(MASK_SIZE * MASK_SIZE, f"mask payload of '{sid}'")
            mask = np.frombuffer(raw, dtype=np.uint8).reshape(MASK_SIZE, MASK_SIZE).copy()
        sample = Sample(sid, grids, label=int(label), mask=mask)
        (train if tag == 0 else test).append(sample)
    if r.pos != len(data):
        raise TruncatedPayloadError(
            f"{len(data) - r.pos} trailing bytes after declared payload"
        )
    dataset = EmbeddingDataset(backbone=backbone, scales=scales, train=train, test=test)
    dataset.validate()
    return dataset


# ---------------------------------------------------------------------------
# train/validation split

_U64 = (1 << 64) - 1


def _splitmix64(seed):
    """Infinite stream of 64-bit outputs of the splitmix64 generator."""
    state = seed & _U64
    while True:
        state = (state + 0x9E3779B97F4A7C15) & _U64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
        yield z ^ (z >> 31)


def seeded_shuffle(n, seed):
    """Deterministic Fisher-Yates permutation of range(n) driven by splitmix64."""
    idx = list(range(n))
    stream = _splitmix64(seed)
    for i in range(n - 1, 0, -1):
        j = next(stream) % (i + 1)
        idx[i], idx[j] = idx[j], idx[i]
    return idx


def split_train_val(train, spec: SplitSpec):
    """Partition the normal samples into a train part and a validation part.

    The split is an exact partition, deterministic in ``spec.seed``; the
    validation part gets round((1 - fraction) * n) samples, at least one.
    """
    spec.validate()
    n = len(train)
    if n < 2:
        raise CannotSplitError(f"need at least 2 samples to split, got {n}")
    n_val = int(np.floor((1.0 - spec.train_fraction) * n + 0.5))
    n_val = min(max(n_val, 1), n - 1)
    order = seeded_shuffle(n, spec.seed)
    train_part = [train[i] for i in order[: n - n_val]]
    val_part = [train[i] for i in order[n - n_val :]]
    return train_part, val_part
