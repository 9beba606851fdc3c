"""2D normalizing flow over patch grids.

A stack of affine coupling steps: each step applies a fixed channel
permutation, predicts scale/shift for the passive channel half from the
active half with a small two-layer convolutional subnet, and accumulates the
per-location log|det J|. The second subnet convolution is zero-initialized so
every step starts as the identity coupling.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .archive import PatchGrid
from .errors import ConfigError, CorruptHeaderError, DimensionMismatchError, NumericOverflowError

CKPT_MAGIC = b"NFH1"
CKPT_VERSION = 1

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class FlowConfig:
    embedding_dim: int
    grid: tuple  # (H, W)
    num_steps: int = 20
    hidden_ratio: float = 0.16
    clamp_alpha: float = 1.9
    init_seed: int = 0

    def validate(self):
        if self.embedding_dim < 2 or self.embedding_dim % 2 != 0:
            raise ConfigError(
                f"embedding_dim must be even and >= 2 for the coupling split, "
                f"got {self.embedding_dim}"
            )
        if self.num_steps < 1:
            raise ConfigError(f"num_steps must be >= 1, got {self.num_steps}")
        if self.hidden_ratio <= 0:
            raise ConfigError(f"hidden_ratio must be > 0, got {self.hidden_ratio}")
        if self.clamp_alpha <= 0:
            raise ConfigError(f"clamp_alpha must be > 0, got {self.clamp_alpha}")

    @property
    def hidden(self):
        return max(1, int(np.floor(self.hidden_ratio * self.embedding_dim + 0.5)))


@dataclass
class FlowOutput:
    z: np.ndarray  # (H, W, D) transformed patches
    logdet: np.ndarray  # (H, W) accumulated log|det J| per location


def _kernel_for_step(index):
    # 1-based odd steps use 3x3, even steps 1x1
    return 3 if index % 2 == 0 else 1


class FlowHead:
    """Invertible stack of coupling steps over an (H, W, D) grid."""

    def __init__(self, config: FlowConfig, perms, kernels, params):
        self.config = config
        self.perms = perms  # list of (D,) int arrays, one per step
        self.kernels = kernels  # list of int
        self.params = params  # {"step{i}/w1": ..., "b1", "w2", "b2"}

    def _check_grid(self, arr):
        h, w = self.config.grid
        expected = (h, w, self.config.embedding_dim)
        if arr.shape != expected:
            raise DimensionMismatchError(
                f"grid shape {arr.shape} does not match flow config {expected}"
            )

    def mean_nll(self, grids) -> float:
        total, count = 0.0, 0
        for g in grids:
            out = flow_forward(self, g)
            nll = flow_nll(out)
            total += float(nll.sum())
            count += nll.size
        return total / count

    def loss_and_grad(self, grids):
        return flow_loss_and_grad(self, grids)

    # -- checkpoint --------------------------------------------------------

    def to_bytes(self) -> bytes:
        c = self.config
        chunks = [CKPT_MAGIC, struct.pack("<IIIII", CKPT_VERSION, c.embedding_dim,
                                          c.grid[0], c.grid[1], c.num_steps)]
        chunks.append(struct.pack("<ffQ", c.hidden_ratio, c.clamp_alpha, c.init_seed))
        for i in range(c.num_steps):
            chunks.append(struct.pack("<I", self.kernels[i]))
            chunks.append(np.ascontiguousarray(self.perms[i], dtype="<u4").tobytes())
            for name in ("w1", "b1", "w2", "b2"):
                arr = self.params[f"step{i}/{name}"]
                chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FlowHead":
        if data[:4] != CKPT_MAGIC:
            raise CorruptHeaderError("bad flow checkpoint magic")
        version, d, h, w, steps = struct.unpack("<IIIII", data[4:24])
        if version != CKPT_VERSION:
            raise CorruptHeaderError(f"unsupported flow checkpoint version {version}")
        ratio, alpha, seed = struct.unpack("<ffQ", data[24:40])
        config = FlowConfig(embedding_dim=d, grid=(h, w), num_steps=steps,
                            hidden_ratio=float(ratio), clamp_alpha=float(alpha),
                            init_seed=int(seed))
        config.validate()
        half, hid = d // 2, config.hidden
        pos = 40
        perms, kernels, params = [], [], {}
        for i in range(steps):
            (k,) = struct.unpack("<I", data[pos : pos + 4])
            pos += 4
            perm = np.frombuffer(data[pos : pos + 4 * d], dtype="<u4").astype(np.int64)
            pos += 4 * d
            kernels.append(int(k))
            perms.append(perm)
            for name, shape in _subnet_shapes(half, hid, d, int(k)).items():
                n = int(np.prod(shape))
                arr = np.frombuffer(data[pos : pos + 4 * n], dtype="<f4")
                if arr.size != n:
                    raise CorruptHeaderError(f"flow checkpoint truncated at step {i}")
                params[f"step{i}/{name}"] = arr.astype(np.float64).reshape(shape)
                pos += 4 * n
        return cls(config, perms, kernels, params)


def _subnet_shapes(half, hidden, d, k):
    return {
        "w1": (hidden, k, k, half), "b1": (hidden,),
        "w2": (d, k, k, hidden), "b2": (d,),
    }


def init_flow(config: FlowConfig) -> FlowHead:
    """Seeded init; zero second convolution makes every step identity."""
    config.validate()
    rng = np.random.default_rng(config.init_seed)
    d = config.embedding_dim
    half, hid = d // 2, config.hidden
    perms, kernels, params = [], [], {}
    for i in range(config.num_steps):
        k = _kernel_for_step(i)
        perms.append(rng.permutation(d))
        kernels.append(k)
        scale = 1.0 / np.sqrt(k * k * half)
        params[f"step{i}/w1"] = rng.uniform(-scale, scale, size=(hid, k, k, half))
        params[f"step{i}/b1"] = np.zeros(hid)
        params[f"step{i}/w2"] = np.zeros((d, k, k, hid))
        params[f"step{i}/b2"] = np.zeros(d)
    return FlowHead(config, perms, kernels, params)


# ---------------------------------------------------------------------------
# convolution primitives (same padding, channels-last)


def _conv2d(x, w, b):
    """Conv with zero padding k//2; returns output and the im2col cache."""
    cout, k, _, cin = w.shape
    hh, ww, _ = x.shape
    p = k // 2
    xp = np.pad(x, ((p, p), (p, p), (0, 0))) if p else x
    cols = np.empty((hh, ww, k, k, cin), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j, :] = xp[i : i + hh, j : j + ww, :]
    cols2 = cols.reshape(hh * ww, k * k * cin)
    out = cols2 @ w.reshape(cout, -1).T + b
    return out.reshape(hh, ww, cout), cols2


def _conv2d_backward(gout, cols2, w, in_shape):
    cout, k, _, cin = w.shape
    hh, ww, _ = in_shape
    g2 = gout.reshape(hh * ww, cout)
    gw = (g2.T @ cols2).reshape(w.shape)
    gb = g2.sum(axis=0)
    gcols = (g2 @ w.reshape(cout, -1)).reshape(hh, ww, k, k, cin)
    p = k // 2
    gxp = np.zeros((hh + 2 * p, ww + 2 * p, cin))
    for i in range(k):
        for j in range(k):
            gxp[i : i + hh, j : j + ww, :] += gcols[:, :, i, j, :]
    return (gxp[p : p + hh, p : p + ww, :] if p else gxp), gw, gb


def _soft_clamp(s, alpha):
    return (2.0 * alpha / np.pi) * np.arctan(s / alpha)


def _soft_clamp_deriv(s, alpha):
    return (2.0 / np.pi) / (1.0 + (s / alpha) ** 2)


# ---------------------------------------------------------------------------
# forward / inverse / nll / grad


def _subnet_forward(head, step, xa):
    p = head.params
    u, cols1 = _conv2d(xa, p[f"step{step}/w1"], p[f"step{step}/b1"])
    hact = np.maximum(u, 0.0)
    o, cols2 = _conv2d(hact, p[f"step{step}/w2"], p[f"step{step}/b2"])
    return u, hact, o, cols1, cols2


def _forward_array(head, x, keep_cache=False):
    d = head.config.embedding_dim
    half = d // 2
    alpha = head.config.clamp_alpha
    logdet = np.zeros(x.shape[:2])
    caches = []
    for i in range(head.config.num_steps):
        xp = x[..., head.perms[i]]
        xa, xb = xp[..., :half], xp[..., half:]
        u, hact, o, cols1, cols2 = _subnet_forward(head, i, xa)
        s, t = o[..., :half], o[..., half:]
        cs = _soft_clamp(s, alpha)
        es = np.exp(cs)
        yb = xb * es + t
        logdet += cs.sum(axis=-1)
        x = np.concatenate([xa, yb], axis=-1)
        if not np.all(np.isfinite(x)):
            raise NumericOverflowError(
                f"non-finite value after coupling step {i}", step=i
            )
        if keep_cache:
            caches.append((xa, xb, u, hact, cols1, cols2, s, cs, es))
    return x, logdet, caches


def flow_forward(head: FlowHead, grid) -> FlowOutput:
    """Run the coupling stack; returns transformed patches and log|det J|."""
    arr = grid.data if isinstance(grid, PatchGrid) else np.asarray(grid)
    head._check_grid(arr)
    z, logdet, _ = _forward_array(head, arr.astype(np.float64))
    return FlowOutput(z=z, logdet=logdet)


def flow_inverse(head: FlowHead, z) -> PatchGrid:
    """Exact algebraic inverse of flow_forward."""
    arr = np.asarray(z, dtype=np.float64)
    head._check_grid(arr)
    d = head.config.embedding_dim
    half = d // 2
    alpha = head.config.clamp_alpha
    x = arr
    for i in reversed(range(head.config.num_steps)):
        xa, yb = x[..., :half], x[..., half:]
        _, _, o, _, _ = _subnet_forward(head, i, xa)
        s, t = o[..., :half], o[..., half:]
        cs = _soft_clamp(s, alpha)
        xb = (yb - t) * np.exp(-cs)
        xp = np.concatenate([xa, xb], axis=-1)
        if not np.all(np.isfinite(xp)):
            raise NumericOverflowError(
                f"non-finite value inverting coupling step {i}", step=i
            )
        out = np.empty_like(xp)
        out[..., head.perms[i]] = xp
        x = out
    return PatchGrid(x)


def flow_nll(output: FlowOutput) -> np.ndarray:
    """Per-location NLL under the standard-normal base distribution."""
    d = output.z.shape[-1]
    return 0.5 * np.sum(output.z**2, axis=-1) + 0.5 * d * _LOG_2PI - output.logdet


def flow_loss_and_grad(head: FlowHead, grids):
    """Mean per-location NLL over the batch and its analytic gradient."""
    arrays = []
    for g in grids:
        arr = g.data if isinstance(g, PatchGrid) else np.asarray(g)
        head._check_grid(arr)
        arrays.append(arr.astype(np.float64))
    d = head.config.embedding_dim
    half = d // 2
    alpha = head.config.clamp_alpha
    n_loc = sum(a.shape[0] * a.shape[1] for a in arrays)

    grads = {name: np.zeros_like(arr) for name, arr in head.params.items()}
    total = 0.0
    for arr in arrays:
        z, logdet, caches = _forward_array(head, arr, keep_cache=True)
        nll = 0.5 * np.sum(z**2, axis=-1) + 0.5 * d * _LOG_2PI - logdet
        total += float(nll.sum())
        gz = z / n_loc
        g_logdet = -np.ones_like(logdet) / n_loc
        for i in reversed(range(head.config.num_steps)):
            xa, xb, u, hact, cols1, cols2, s, cs, es = caches[i]
            ga = gz[..., :half].copy()
            gb = gz[..., half:]
            gxb = gb * es
            gcs = gb * xb * es + g_logdet[..., None]
            gt = gb
            gs = gcs * _soft_clamp_deriv(s, alpha)
            go = np.concatenate([gs, gt], axis=-1)
            ghact, gw2, gb2 = _conv2d_backward(
                go, cols2, head.params[f"step{i}/w2"], hact.shape
            )
            gu = ghact * (u > 0)
            gxa_conv, gw1, gb1 = _conv2d_backward(
                gu, cols1, head.params[f"step{i}/w1"], xa.shape
            )
            grads[f"step{i}/w1"] += gw1
            grads[f"step{i}/b1"] += gb1
            grads[f"step{i}/w2"] += gw2
            grads[f"step{i}/b2"] += gb2
            gxp = np.concatenate([ga + gxa_conv, gxb], axis=-1)
            gz = np.empty_like(gxp)
            gz[..., head.perms[i]] = gxp
    return total / n_loc, grads


def flow_grad(head: FlowHead, batch) -> dict:
    """Gradient of the mean NLL over a batch of grids w.r.t. subnet weights."""
    return flow_loss_and_grad(head, batch)[1]
