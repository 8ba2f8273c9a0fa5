"""Multi-stage generator/discriminator assembly with metadata injection.

The generator maps (noise, metadata) through a dense stem to a 4x4 feature
map, then runs residual and upsampling blocks per stage, inserting the
long-range pair (or its ablation replacement) the first time the configured
feature-map side is reached. Each stage emits an RGB image through a tanh
head. Discriminators are unconditional strided-conv stacks, one per stage.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .blocks import ResidualBlock, SelfAttention, UpsampleBlock
from .layers import Conv2d, Dense, Module, seeded_normal
from .longrange import LongRangePair
from .tensor import ShapeError, Tensor

LRM_REPLACEMENTS = ("none", "residual", "self_attention")
MIN_CHANNELS = 4


@dataclass
class ModelConfig:
    stages: int = 3
    resolutions: tuple = (8, 16, 32)
    channels: int = 64
    noise_dim: int = 32
    metadata_dim: int = 16
    lrm_resolution: int = 16
    use_metadata: bool = True
    use_lrm: bool = True
    lrm_replacement: str = "none"
    seed: int = 0

    def __post_init__(self):
        self.resolutions = tuple(int(r) for r in self.resolutions)
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if len(self.resolutions) != self.stages:
            raise ValueError(f"{self.stages} stages need {self.stages} resolutions, got {self.resolutions}")
        if self.resolutions[0] < 8 or self.resolutions[0] % 4:
            raise ValueError(f"first resolution must be a multiple of 4 and >= 8, got {self.resolutions[0]}")
        for lo, hi in zip(self.resolutions, self.resolutions[1:]):
            if hi != 2 * lo:
                raise ValueError(f"resolutions must strictly double, got {self.resolutions}")
        if self.lrm_resolution not in self.feature_sides():
            raise ValueError(
                f"lrm_resolution {self.lrm_resolution} is not an internal feature-map side "
                f"{self.feature_sides()}"
            )
        if self.lrm_replacement not in LRM_REPLACEMENTS:
            raise ValueError(f"lrm_replacement must be one of {LRM_REPLACEMENTS}, got {self.lrm_replacement!r}")
        if self.use_lrm and self.lrm_replacement != "none":
            raise ValueError("lrm_replacement applies only when use_lrm is false")
        if self.channels < MIN_CHANNELS:
            raise ValueError(f"channels must be >= {MIN_CHANNELS}")
        if self.noise_dim < 1 or self.metadata_dim < 1:
            raise ValueError("noise_dim and metadata_dim must be >= 1")

    def feature_sides(self):
        sides = [4]
        while sides[-1] < self.resolutions[-1]:
            sides.append(sides[-1] * 2)
        return tuple(sides)

    def channels_at(self, side):
        return max(self.channels >> int(math.log2(side // 4)), MIN_CHANNELS)

    def with_mode(self, mode):
        """Config for one ablation mode: full, no_meta, no_lrm, residual, self_attention."""
        if mode == "full":
            return replace(self, use_metadata=True, use_lrm=True, lrm_replacement="none")
        if mode == "no_meta":
            return replace(self, use_metadata=False, use_lrm=True, lrm_replacement="none")
        if mode == "no_lrm":
            return replace(self, use_lrm=False, lrm_replacement="none")
        if mode == "residual":
            return replace(self, use_lrm=False, lrm_replacement="residual")
        if mode == "self_attention":
            return replace(self, use_lrm=False, lrm_replacement="self_attention")
        raise ValueError(f"unknown ablation mode {mode!r}")


@dataclass
class StageOutputs:
    features: list
    images: list


# -- metadata embedders --------------------------------------------------------

META_MAGIC = b"LRMETA01"


class FrozenConvEmbedder:
    """Seeded, never-trained strided conv+GLU stack producing global features.

    Stands in for a pretrained deep encoder: its globally averaged feature map
    keeps summarized information about the input while dropping spatial detail.
    """

    def __init__(self, resolution, out_dim, seed, name="metadata-embedder"):
        if resolution < 4 or resolution & (resolution - 1):
            raise ValueError(f"embedder resolution must be a power of two >= 4, got {resolution}")
        self.resolution = resolution
        self.out_dim = out_dim
        self.seed = seed
        n_layers = min(4, int(math.log2(resolution)) - 1)
        widths = [3] + [min(8 << i, 64) for i in range(n_layers - 1)] + [out_dim]
        self.kernels = []
        for i in range(n_layers):
            c_in, c_out = widths[i], widths[i + 1]
            std = math.sqrt(2.0 / (c_in * 16))
            self.kernels.append(
                seeded_normal(seed, f"{name}.conv{i}", (2 * c_out, c_in, 4, 4), std).astype(np.float64)
            )

    def features(self, image):
        """Final feature map (out_dim, h, w) for one (3, R, R) image."""
        return self._stack(np.asarray(image)[None])[0]

    def _stack(self, batch):
        if batch.ndim != 4 or batch.shape[1] != 3 or batch.shape[2:] != (self.resolution, self.resolution):
            raise ShapeError(
                f"embedder expects (N, 3, {self.resolution}, {self.resolution}) images, got {batch.shape}"
            )
        h = batch.astype(batch.dtype, copy=False)
        for kernel in self.kernels:
            out, _ = T.conv2d_raw(h, kernel.astype(h.dtype), stride=2, pad=1)
            half = out.shape[1] // 2
            a, b = out[:, :half], out[:, half:]
            h = a * _sigmoid_np(b)
        return h

    def embed(self, image):
        return self.features(image).mean(axis=(1, 2))

    def embed_batch(self, batch):
        return self._stack(np.asarray(batch)).mean(axis=(2, 3))


def _sigmoid_np(x):
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    s[~pos] = e / (1.0 + e)
    return s


def encode_metadata(meta_image, embedder):
    """Globally averaged deep features of one meta-image; gradient-free."""
    image = meta_image.data if isinstance(meta_image, Tensor) else np.asarray(meta_image)
    return embedder.features(image).mean(axis=(1, 2))


class PrecomputedMetadata:
    """Metadata vectors loaded from an LRMETA01 file, indexed per sample."""

    def __init__(self, vectors):
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ShapeError(f"metadata vectors must be 2-D, got {vectors.shape}")
        self.vectors = vectors

    @property
    def count(self):
        return self.vectors.shape[0]

    @property
    def out_dim(self):
        return self.vectors.shape[1]

    def vector(self, index):
        return self.vectors[index % self.count]

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            raw = fh.read()
        if raw[:8] != META_MAGIC:
            raise ValueError(f"{path}: bad metadata magic {raw[:8]!r}")
        if len(raw) < 16:
            raise ValueError(f"{path}: truncated metadata header")
        count, dim = struct.unpack_from("<II", raw, 8)
        need = 16 + 4 * count * dim
        if len(raw) != need:
            raise ValueError(f"{path}: expected {need} bytes, found {len(raw)}")
        vectors = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=16).reshape(count, dim)
        return cls(vectors.copy())


def save_metadata_file(vectors, path):
    vectors = np.ascontiguousarray(np.asarray(vectors, dtype="<f4"))
    with open(path, "wb") as fh:
        fh.write(META_MAGIC)
        fh.write(struct.pack("<II", vectors.shape[0], vectors.shape[1]))
        fh.write(vectors.tobytes())


# -- generator and discriminator ------------------------------------------------


class Generator(Module):
    def __init__(self, config):
        seed = config.seed
        self.config = config
        in_dim = config.noise_dim + (config.metadata_dim if config.use_metadata else 0)
        self.stem = Dense(seed, "gen.stem", in_dim, config.channels * 16)
        self.stage_ops = []
        self.to_rgb = []
        self.longrange = None

        side = 4
        cur = config.channels
        for k, res in enumerate(config.resolutions):
            ops = []
            if k > 0:
                ops.append(ResidualBlock(seed, f"gen.stage{k}.res", cur))
            while side < res:
                nxt = max(cur // 2, MIN_CHANNELS)
                side *= 2
                ops.append(UpsampleBlock(seed, f"gen.up{side}", cur, nxt))
                cur = nxt
                if side == config.lrm_resolution:
                    inserted = self._make_longrange(seed, cur, side)
                    if inserted is not None:
                        ops.append(inserted)
                        self.longrange = inserted
            self.stage_ops.append(ops)
            self.to_rgb.append(Conv2d(seed, f"gen.to_rgb{k}", cur, 3, bias=True))

    def _make_longrange(self, seed, channels, side):
        cfg = self.config
        if cfg.use_lrm:
            return LongRangePair(seed, "gen.longrange", channels, side)
        if cfg.lrm_replacement == "residual":
            return ResidualBlock(seed, "gen.lrm_residual", channels)
        if cfg.lrm_replacement == "self_attention":
            return SelfAttention(seed, "gen.lrm_attention", channels)
        return None

    def forward(self, noise, metadata=None):
        cfg = self.config
        if noise.ndim != 2 or noise.shape[1] != cfg.noise_dim:
            raise ShapeError(f"noise must be (N, {cfg.noise_dim}), got {noise.shape}")
        if cfg.use_metadata:
            if metadata is None:
                raise ShapeError("generator configured with metadata but none was given")
            if metadata.shape != (noise.shape[0], cfg.metadata_dim):
                raise ShapeError(
                    f"metadata must be ({noise.shape[0]}, {cfg.metadata_dim}), got {metadata.shape}"
                )
            stem_in = T.concat([noise, metadata], axis=1)
        else:
            stem_in = noise
        n = noise.shape[0]
        h = T.reshape(self.stem(stem_in), (n, cfg.channels, 4, 4))
        features, images = [], []
        for k in range(cfg.stages):
            for op in self.stage_ops[k]:
                h = op(h)
            features.append(h)
            images.append(T.tanh(self.to_rgb[k](h)))
        return StageOutputs(features=features, images=images)

    __call__ = forward

    def longrange_param_count(self):
        return self.longrange.param_count() if self.longrange is not None else 0


class Discriminator(Module):
    """Strided-conv downsampling stack ending in a scalar logit."""

    def __init__(self, seed, name, resolution, base=16, cap=64):
        if resolution < 8 or resolution & (resolution - 1):
            raise ValueError(f"discriminator resolution must be a power of two >= 8, got {resolution}")
        self.resolution = resolution
        self.convs = []
        c_in, c, side = 3, base, resolution
        while side > 4:
            self.convs.append(Conv2d(seed, f"{name}.down{side}", c_in, c, k=4, stride=2, padding=1))
            c_in, c, side = c, min(c * 2, cap), side // 2
        self.head = Dense(seed, f"{name}.head", c_in * 16, 1)

    def forward(self, image):
        if image.ndim != 4 or image.shape[1] != 3 or image.shape[2:] != (self.resolution, self.resolution):
            raise ShapeError(
                f"discriminator expects (N, 3, {self.resolution}, {self.resolution}) images, got {image.shape}"
            )
        h = image
        for conv in self.convs:
            h = T.leaky_relu(conv(h), 0.2)
        logits = self.head(T.reshape(h, (image.shape[0], -1)))
        return T.reshape(logits, (image.shape[0],))

    __call__ = forward


def build_discriminators(config):
    return [Discriminator(config.seed, f"disc{k}", res) for k, res in enumerate(config.resolutions)]


def param_breakdown(generator, discriminators):
    """Exact per-component parameter counts; frozen embedders are excluded."""
    counts = {"generator": generator.param_count()}
    counts["generator.longrange"] = generator.longrange_param_count()
    for k, disc in enumerate(discriminators):
        counts[f"discriminator.{k}"] = disc.param_count()
    counts["total"] = counts["generator"] + sum(
        counts[f"discriminator.{k}"] for k in range(len(discriminators))
    )
    return counts
