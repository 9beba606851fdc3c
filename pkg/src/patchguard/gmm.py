"""Mixture-density head over individual patch embeddings.

Three linear maps predict, per patch, the logits, means and (log) scales of a
diagonal Gaussian mixture; the anomaly score of a patch is the negative
log-likelihood of the embedding under its own predicted mixture.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .archive import PatchGrid
from .errors import ConfigError, CorruptHeaderError, DimensionMismatchError

CKPT_MAGIC = b"GMMH"
CKPT_VERSION = 1

SIGMA_MIN = 1e-6
SIGMA_MAX = 1e6
_LOG_SIGMA_MIN = np.log(SIGMA_MIN)
_LOG_SIGMA_MAX = np.log(SIGMA_MAX)
_LOG_2PI = np.log(2.0 * np.pi)

_PARAM_ORDER = ("pi_w", "pi_b", "mu_w", "mu_b", "sigma_w", "sigma_b")


@dataclass
class GmmConfig:
    embedding_dim: int
    num_gaussians: int = 100
    init_seed: int = 0

    def validate(self):
        if self.embedding_dim < 1:
            raise ConfigError(f"embedding_dim must be >= 1, got {self.embedding_dim}")
        if self.num_gaussians < 1:
            raise ConfigError(f"num_gaussians must be >= 1, got {self.num_gaussians}")


@dataclass
class MixtureParams:
    """Per-patch mixture: component weights, means and positive scales."""

    pi: np.ndarray  # (K,)
    mu: np.ndarray  # (K, D)
    sigma: np.ndarray  # (K, D)


def param_count(config: GmmConfig) -> int:
    """Total parameter count of the three linear maps (weights and biases)."""
    d, k = config.embedding_dim, config.num_gaussians
    return 2 * (d * k * d + k * d) + (d * k + k)


class GmmHead:
    """Mixture-density network: three linear maps D -> (K, K*D, K*D)."""

    def __init__(self, config: GmmConfig, params: dict):
        self.config = config
        self.params = params

    @property
    def embedding_dim(self):
        return self.config.embedding_dim

    # -- forward pieces ----------------------------------------------------

    def _check_dim(self, d):
        if d != self.config.embedding_dim:
            raise DimensionMismatchError(
                f"expected embedding dim {self.config.embedding_dim}, got {d}"
            )

    def _raw_outputs(self, x):
        """Linear-map outputs for a batch x of shape (N, D)."""
        p = self.params
        logits = x @ p["pi_w"].T + p["pi_b"]
        mu = (x @ p["mu_w"].T + p["mu_b"]).reshape(
            x.shape[0], self.config.num_gaussians, self.config.embedding_dim
        )
        raw = (x @ p["sigma_w"].T + p["sigma_b"]).reshape(mu.shape)
        return logits, mu, raw

    def _mixture_batch(self, x):
        logits, mu, raw = self._raw_outputs(x)
        log_pi = logits - _logsumexp(logits, axis=1, keepdims=True)
        raw_clipped = np.clip(raw, _LOG_SIGMA_MIN, _LOG_SIGMA_MAX)
        sigma = np.exp(raw_clipped)
        return log_pi, mu, sigma, raw

    def _nll_batch(self, x):
        """Mixture NLL for each row of x, via log-sum-exp."""
        log_pi, mu, sigma, _ = self._mixture_batch(x)
        a = log_pi + _log_component(x, mu, sigma)
        return -_logsumexp(a, axis=1)

    def mean_nll(self, grids) -> float:
        """Mean per-patch NLL over a list of grids (training loss)."""
        x = _stack_patches(grids, self.config.embedding_dim)
        return float(np.mean(self._nll_batch(x)))

    def loss_and_grad(self, grids):
        x = _stack_patches(grids, self.config.embedding_dim)
        return gmm_loss_and_grad(self, x)

    # -- checkpoint --------------------------------------------------------

    def to_bytes(self) -> bytes:
        chunks = [CKPT_MAGIC, struct.pack("<III", CKPT_VERSION,
                                          self.config.embedding_dim,
                                          self.config.num_gaussians)]
        for name in _PARAM_ORDER:
            chunks.append(np.ascontiguousarray(self.params[name], dtype="<f4").tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "GmmHead":
        if data[:4] != CKPT_MAGIC:
            raise CorruptHeaderError("bad GMM checkpoint magic")
        version, d, k = struct.unpack("<III", data[4:16])
        if version != CKPT_VERSION:
            raise CorruptHeaderError(f"unsupported GMM checkpoint version {version}")
        config = GmmConfig(embedding_dim=d, num_gaussians=k)
        shapes = _param_shapes(d, k)
        pos = 16
        params = {}
        for name in _PARAM_ORDER:
            shape = shapes[name]
            n = int(np.prod(shape))
            arr = np.frombuffer(data[pos : pos + 4 * n], dtype="<f4")
            if arr.size != n:
                raise CorruptHeaderError(f"GMM checkpoint truncated at '{name}'")
            params[name] = arr.astype(np.float64).reshape(shape)
            pos += 4 * n
        return cls(config, params)


def _param_shapes(d, k):
    return {
        "pi_w": (k, d), "pi_b": (k,),
        "mu_w": (k * d, d), "mu_b": (k * d,),
        "sigma_w": (k * d, d), "sigma_b": (k * d,),
    }


def init_gmm(config: GmmConfig) -> GmmHead:
    """Seeded init: uniform weights with scale 1/sqrt(D), zero biases.

    Zero scale biases make the initial sigma sit near 1 for centred inputs.
    """
    config.validate()
    rng = np.random.default_rng(config.init_seed)
    d, k = config.embedding_dim, config.num_gaussians
    scale = 1.0 / np.sqrt(d)
    params = {}
    for name, shape in _param_shapes(d, k).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.uniform(-scale, scale, size=shape)
    return GmmHead(config, params)


def _logsumexp(a, axis=None, keepdims=False):
    m = np.max(a, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))
    return out if keepdims else np.squeeze(out, axis=axis)


def _log_component(x, mu, sigma):
    """Log density of x under each diagonal Gaussian component, (N, K)."""
    diff = (x[:, None, :] - mu) / sigma
    return (
        -0.5 * np.sum(diff * diff, axis=2)
        - np.sum(np.log(sigma), axis=2)
        - 0.5 * x.shape[1] * _LOG_2PI
    )


def _stack_patches(grids, d):
    rows = []
    for g in grids:
        arr = g.data if isinstance(g, PatchGrid) else np.asarray(g)
        if arr.shape[-1] != d:
            raise DimensionMismatchError(
                f"grid channel count {arr.shape[-1]} does not match head dim {d}"
            )
        rows.append(arr.reshape(-1, d))
    return np.concatenate(rows, axis=0).astype(np.float64)


# ---------------------------------------------------------------------------
# public operations


def gmm_forward(head: GmmHead, patch) -> MixtureParams:
    """Predict the mixture parameters for a single patch embedding."""
    x = np.asarray(patch, dtype=np.float64).reshape(1, -1)
    head._check_dim(x.shape[1])
    log_pi, mu, sigma, _ = head._mixture_batch(x)
    return MixtureParams(pi=np.exp(log_pi[0]), mu=mu[0], sigma=sigma[0])


def gmm_nll(params: MixtureParams, x) -> float:
    """Negative log mixture likelihood of x, computed via log-sum-exp."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    a = np.log(params.pi)[None, :] + _log_component(
        x, params.mu[None, :, :], params.sigma[None, :, :]
    )
    return float(-_logsumexp(a, axis=1)[0])


def gmm_patch_scores(head: GmmHead, grid) -> np.ndarray:
    """Per-patch NLL map of shape (H, W); higher means more anomalous."""
    arr = grid.data if isinstance(grid, PatchGrid) else np.asarray(grid)
    head._check_dim(arr.shape[-1])
    h, w, d = arr.shape
    nll = head._nll_batch(arr.reshape(-1, d).astype(np.float64))
    return nll.reshape(h, w)


def gmm_loss_and_grad(head: GmmHead, x):
    """Mean NLL over the patch batch x (N, D) and its analytic gradient."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        x = x.reshape(-1, head.config.embedding_dim)
    head._check_dim(x.shape[1])
    n, d = x.shape
    k = head.config.num_gaussians

    logits, mu, raw = head._raw_outputs(x)
    log_pi = logits - _logsumexp(logits, axis=1, keepdims=True)
    pi = np.exp(log_pi)
    raw_clipped = np.clip(raw, _LOG_SIGMA_MIN, _LOG_SIGMA_MAX)
    sigma = np.exp(raw_clipped)
    clip_active = (raw > _LOG_SIGMA_MIN) & (raw < _LOG_SIGMA_MAX)

    a = log_pi + _log_component(x, mu, sigma)
    loss = float(np.mean(-_logsumexp(a, axis=1)))

    # responsibilities of the mixture components per patch
    r = np.exp(a - _logsumexp(a, axis=1, keepdims=True))

    # d(mean NLL)/d logits: (pi - r) / N
    g_logits = (pi - r) / n
    # d(mean NLL)/d mu: -r * (x - mu) / sigma^2 / N
    diff = x[:, None, :] - mu
    g_mu = (-r[:, :, None] * diff / (sigma * sigma)) / n
    # d(mean NLL)/d raw: -r * ((x - mu)^2 / sigma^2 - 1), zero where clipped
    g_raw = (-r[:, :, None] * ((diff / sigma) ** 2 - 1.0) * clip_active) / n

    g_mu = g_mu.reshape(n, k * d)
    g_raw = g_raw.reshape(n, k * d)
    grads = {
        "pi_w": g_logits.T @ x,
        "pi_b": g_logits.sum(axis=0),
        "mu_w": g_mu.T @ x,
        "mu_b": g_mu.sum(axis=0),
        "sigma_w": g_raw.T @ x,
        "sigma_b": g_raw.sum(axis=0),
    }
    return loss, grads


def gmm_grad(head: GmmHead, batch) -> dict:
    """Gradient of the mean NLL over a batch of patch embeddings."""
    x = np.stack([np.asarray(p, dtype=np.float64) for p in batch], axis=0)
    return gmm_loss_and_grad(head, x)[1]
