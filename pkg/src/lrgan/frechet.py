"""Frechet-style distance over frozen-embedder features, plus symmetry probing.

The matrix square root comes from a symmetric eigendecomposition of the
symmetrized covariance product with negative eigenvalues clamped to zero,
which keeps the distance symmetric and non-negative at desk scale.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

PSD_TOL = 1e-8
STATS_MAGIC = b"LRSTAT01"


@dataclass
class DistributionStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.mu.ndim != 1 or self.sigma.shape != (self.mu.size, self.mu.size):
            raise ValueError(f"stats shapes disagree: mu {self.mu.shape}, sigma {self.sigma.shape}")


def sqrtm_psd(mat):
    """Symmetric PSD square root via eigendecomposition with clamping."""
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def _check_psd(sigma, label):
    vals = np.linalg.eigvalsh((sigma + sigma.T) / 2.0)
    floor = -PSD_TOL * max(1.0, float(np.abs(vals).max(initial=0.0)))
    if vals.min(initial=0.0) < floor:
        raise ValueError(f"{label} covariance is not PSD (min eigenvalue {vals.min():.3e})")


def frechet_distance(a, b):
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), clamped at zero."""
    if a.mu.size != b.mu.size:
        raise ValueError(f"stats dims disagree: {a.mu.size} vs {b.mu.size}")
    _check_psd(a.sigma, "first")
    _check_psd(b.sigma, "second")
    prod = a.sigma @ b.sigma
    sym = (prod + prod.T) / 2.0
    vals = np.clip(np.linalg.eigvalsh(sym), 0.0, None)
    diff = a.mu - b.mu
    dist = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * np.sqrt(vals).sum())
    return max(dist, 0.0)


def embed_and_stats(images, embedder):
    """Sample mean/covariance of frozen-embedder features over >= 2 images."""
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[0] < 2:
        raise ValueError(f"need a stack of at least 2 images, got shape {images.shape}")
    feats = embedder.embed_batch(images).astype(np.float64)
    mu = feats.mean(axis=0)
    sigma = np.atleast_2d(np.cov(feats, rowvar=False))
    return DistributionStats(mu=mu, sigma=sigma)


def symmetry_score(image):
    """Mean |I(x, y, c) - I(W-1-x, y, c)|; zero for mirror-symmetric images."""
    arr = np.asarray(image)
    if arr.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got {arr.shape}")
    if arr.shape[2] % 2:
        raise ValueError(f"width must be even, got {arr.shape[2]}")
    return float(np.abs(arr - arr[:, :, ::-1]).mean())


def save_stats(stats, path):
    dim = stats.mu.size
    with open(path, "wb") as fh:
        fh.write(STATS_MAGIC)
        fh.write(struct.pack("<I", dim))
        fh.write(np.ascontiguousarray(stats.mu, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(stats.sigma, dtype="<f8").tobytes())


def load_stats(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != STATS_MAGIC:
        raise ValueError(f"{path}: bad stats magic {raw[:8]!r}")
    if len(raw) < 12:
        raise ValueError(f"{path}: truncated stats header")
    (dim,) = struct.unpack_from("<I", raw, 8)
    need = 12 + 8 * (dim + dim * dim)
    if len(raw) != need:
        raise ValueError(f"{path}: expected {need} bytes, found {len(raw)}")
    mu = np.frombuffer(raw, dtype="<f8", count=dim, offset=12)
    sigma = np.frombuffer(raw, dtype="<f8", count=dim * dim, offset=12 + 8 * dim).reshape(dim, dim)
    return DistributionStats(mu=mu.copy(), sigma=sigma.copy())
