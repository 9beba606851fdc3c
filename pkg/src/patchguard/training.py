"""Shared optimization loop: Adam with decoupled weight decay, early stopping
on validation loss, and best-checkpoint restoration."""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import SplitSpec, split_train_val
from .errors import ConfigError, CorruptHeaderError, NumericOverflowError, TrainingAbortedError
from .flow import FlowHead
from .gmm import GmmHead

BUNDLE_MAGIC = b"PGB1"
BUNDLE_VERSION = 1
_KIND_CODES = {"gmm": 0, "nf": 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}
_HEAD_CLASSES = {"gmm": GmmHead, "nf": FlowHead}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 8
    max_epochs: int = 500
    patience: int = 30
    seed: int = 0
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8

    def validate(self):
        if min(self.learning_rate, self.weight_decay, self.adam_eps) < 0:
            raise ConfigError("learning rate, weight decay and eps must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch size, max epochs and patience must be >= 1")
        if self.patience >= self.max_epochs:
            raise ConfigError(
                f"patience ({self.patience}) must be smaller than "
                f"max_epochs ({self.max_epochs})"
            )


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0  # 1-based
    stopped_epoch: int = 0


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    def __init__(self, params):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """In-place Adam update with decoupled weight decay."""
    b1, b2 = config.adam_betas
    state.t += 1
    t = state.t
    for name, w in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1**t)
        v_hat = state.v[name] / (1 - b2**t)
        w -= config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        if config.weight_decay:
            w -= config.learning_rate * config.weight_decay * w
    return params, state


# ---------------------------------------------------------------------------
# bundle: one head per archive scale, trained jointly


class HeadBundle:
    """Per-scale heads of one kind, presenting a single parameter surface.

    The joint loss is the mean over scales of each head's mean per-patch NLL,
    so with disjoint parameters this trains every head independently under a
    shared early-stopping schedule.
    """

    def __init__(self, kind, heads):
        if kind not in _KIND_CODES:
            raise ConfigError(f"unknown head kind '{kind}'")
        self.kind = kind
        self.heads = heads
        self.params = {}
        for i, head in enumerate(heads):
            for name, arr in head.params.items():
                self.params[f"scale{i}:{name}"] = arr

    def loss_and_grad(self, samples):
        loss = 0.0
        grads = {}
        n = len(self.heads)
        for i, head in enumerate(self.heads):
            grids = [s.grids[i] for s in samples]
            l, g = head.loss_and_grad(grids)
            loss += l / n
            for name, arr in g.items():
                grads[f"scale{i}:{name}"] = arr / n
        return loss, grads

    def mean_nll(self, samples) -> float:
        return float(np.mean([
            head.mean_nll([s.grids[i] for s in samples])
            for i, head in enumerate(self.heads)
        ]))

    def to_bytes(self) -> bytes:
        chunks = [BUNDLE_MAGIC, struct.pack("<III", BUNDLE_VERSION,
                                            _KIND_CODES[self.kind], len(self.heads))]
        for head in self.heads:
            payload = head.to_bytes()
            chunks.append(struct.pack("<I", len(payload)))
            chunks.append(payload)
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "HeadBundle":
        if data[:4] != BUNDLE_MAGIC:
            raise CorruptHeaderError("bad bundle checkpoint magic")
        version, kind_code, n_heads = struct.unpack("<III", data[4:16])
        if version != BUNDLE_VERSION or kind_code not in _KIND_NAMES:
            raise CorruptHeaderError("unsupported bundle checkpoint header")
        kind = _KIND_NAMES[kind_code]
        pos = 16
        heads = []
        for _ in range(n_heads):
            (length,) = struct.unpack("<I", data[pos : pos + 4])
            pos += 4
            heads.append(_HEAD_CLASSES[kind].from_bytes(data[pos : pos + length]))
            pos += length
        return cls(kind, heads)


# ---------------------------------------------------------------------------
# training loop


def train(bundle, dataset, split: SplitSpec, config: TrainConfig):
    """Train a head (bundle) on the normal samples per the standard protocol.

    Shuffles the train part each epoch with a seeded PRNG, evaluates the full
    validation part every epoch, restores the best-validation-loss parameters
    and stops after `patience` epochs without improvement.
    """
    config.validate()
    train_part, val_part = split_train_val(dataset.train, split)
    rng = np.random.default_rng(config.seed)
    state = AdamState(bundle.params)
    history = TrainHistory()
    best_val = np.inf
    best_params = None
    since_best = 0

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(train_part))
        batch_losses = []
        try:
            for start in range(0, len(order), config.batch_size):
                batch = [train_part[i] for i in order[start : start + config.batch_size]]
                loss, grads = bundle.loss_and_grad(batch)
                if not np.isfinite(loss):
                    raise NumericOverflowError(f"non-finite loss in epoch {epoch}")
                adam_step(bundle.params, grads, state, config)
                batch_losses.append(loss)
            val_loss = bundle.mean_nll(val_part)
            if not np.isfinite(val_loss):
                raise NumericOverflowError(f"non-finite validation loss in epoch {epoch}")
        except NumericOverflowError as exc:
            raise TrainingAbortedError(str(exc), epoch=epoch) from exc

        history.train_loss.append(float(np.mean(batch_losses)))
        history.val_loss.append(float(val_loss))
        history.stopped_epoch = epoch

        if val_loss < best_val:
            best_val = val_loss
            best_params = {k: v.copy() for k, v in bundle.params.items()}
            history.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    for name, arr in best_params.items():
        bundle.params[name][...] = arr
    return bundle, history


# ---------------------------------------------------------------------------
# run directory IO: run.meta + best.ckpt + history.csv


def save_run(bundle, history: TrainHistory, path, meta=None) -> None:
    """Write run.meta, best.ckpt and history.csv into the run directory."""
    run_dir = Path(path)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "best.ckpt").write_bytes(bundle.to_bytes())
    with open(run_dir / "history.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for i, (tr, vl) in enumerate(zip(history.train_loss, history.val_loss), 1):
            writer.writerow([i, repr(tr), repr(vl)])
    lines = dict(meta or {})
    lines["head"] = bundle.kind
    lines["best_epoch"] = history.best_epoch
    lines["stopped_epoch"] = history.stopped_epoch
    with open(run_dir / "run.meta", "w") as fh:
        for key in sorted(lines):
            fh.write(f"{key} = {lines[key]}\n")


def load_run(path):
    """Load (bundle, history, meta) back from a run directory."""
    run_dir = Path(path)
    bundle = HeadBundle.from_bytes((run_dir / "best.ckpt").read_bytes())
    history = TrainHistory()
    with open(run_dir / "history.csv", newline="") as fh:
        for row in list(csv.reader(fh))[1:]:
            history.train_loss.append(float(row[1]))
            history.val_loss.append(float(row[2]))
    meta = {}
    with open(run_dir / "run.meta") as fh:
        for line in fh:
            if " = " in line:
                key, value = line.rstrip("\n").split(" = ", 1)
                meta[key] = value
    history.best_epoch = int(meta.get("best_epoch", 0))
    history.stopped_epoch = int(meta.get("stopped_epoch", 0))
    return bundle, history, meta


def dataset_hash(path) -> str:
    """SHA-256 of the archive file backing a run, recorded in run.meta."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
