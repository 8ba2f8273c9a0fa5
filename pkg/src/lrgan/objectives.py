"""Loss functions: color consistency across stages and the adversarial pair.

Both adversarial losses take raw logits and go through a stable log-sigmoid,
so they stay finite for any finite logit. Color statistics use the population
covariance of RGB values over pixels; the lower-resolution batch is nearest-
upsampled before comparison so the statistics are computed over aligned
pixel grids.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .tensor import ShapeError, Tensor


@dataclass
class LossWeights:
    lambda1: float = 1.0
    lambda2: float = 5.0
    lambda3: float = 50.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.lambda3 < 0:
            raise ValueError(f"loss weights must be non-negative, got {self}")


@dataclass
class ColorStats:
    """Per-image color mean (3,) and population covariance (3, 3)."""

    mu: Tensor
    sigma: Tensor


def color_stats(image):
    """Mean and population covariance of RGB values over all pixels."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"color_stats expects a (3, H, W) image, got {image.shape}")
    pixels = image.shape[1] * image.shape[2]
    flat = T.reshape(image, (3, pixels))
    mu = T.tmean(flat, axis=1)
    centered = flat - T.reshape(mu, (3, 1))
    sigma = T.matmul(centered, T.transpose(centered)) * (1.0 / pixels)
    return ColorStats(mu=mu, sigma=sigma)


def _batch_color_stats(batch):
    n = batch.shape[0]
    pixels = batch.shape[2] * batch.shape[3]
    flat = T.reshape(batch, (n, 3, pixels))
    mu = T.tmean(flat, axis=2)
    centered = flat - T.reshape(mu, (n, 3, 1))
    sigma = T.bmm(centered, T.transpose(centered, (0, 2, 1))) * (1.0 / pixels)
    return mu, sigma


def color_consistency_loss(batch_hi, batch_lo, weights):
    """Batch-mean gap between color stats of one stage and the stage below."""
    if batch_hi.ndim != 4 or batch_lo.ndim != 4 or batch_hi.shape[1] != 3 or batch_lo.shape[1] != 3:
        raise ShapeError(f"expected (N, 3, H, W) batches, got {batch_hi.shape} and {batch_lo.shape}")
    if batch_hi.shape[0] != batch_lo.shape[0]:
        raise ShapeError(f"batch sizes differ: {batch_hi.shape[0]} vs {batch_lo.shape[0]}")
    while batch_lo.shape[2] < batch_hi.shape[2]:
        batch_lo = T.upsample_nearest(batch_lo)
    if batch_lo.shape[2:] != batch_hi.shape[2:]:
        raise ShapeError(f"resolutions are not alignable: {batch_hi.shape} vs {batch_lo.shape}")
    mu_hi, sig_hi = _batch_color_stats(batch_hi)
    mu_lo, sig_lo = _batch_color_stats(batch_lo)
    dmu = mu_hi - mu_lo
    dsig = sig_hi - sig_lo
    per_sample = weights.lambda1 * T.tsum(dmu * dmu, axis=1) + weights.lambda2 * T.tsum(
        dsig * dsig, axis=(1, 2)
    )
    return T.tmean(per_sample)


def generator_loss(fake_logits, color_losses, weights):
    """Sum over stages of -1/2 E[log D(fake)] plus weighted color terms."""
    if not fake_logits:
        raise ShapeError("generator_loss needs at least one stage of logits")
    total = None
    for logits in fake_logits:
        term = T.tmean(T.log_sigmoid(logits)) * -0.5
        total = term if total is None else total + term
    for closs in color_losses:
        total = total + weights.lambda3 * closs
    return total


def discriminator_loss(real_logits, fake_logits):
    """Sum over stages of -1/2 E[log D(real)] - 1/2 E[log(1 - D(fake))]."""
    if len(real_logits) != len(fake_logits):
        raise ShapeError(f"stage count mismatch: {len(real_logits)} real vs {len(fake_logits)} fake")
    if not real_logits:
        raise ShapeError("discriminator_loss needs at least one stage of logits")
    total = None
    for real, fake in zip(real_logits, fake_logits):
        if real.size == 0 or fake.size == 0:
            raise ShapeError("discriminator_loss got an empty logit batch")
        term = T.tmean(T.log_sigmoid(real)) * -0.5 + T.tmean(T.log_sigmoid(-fake)) * -0.5
        total = term if total is None else total + term
    return total
