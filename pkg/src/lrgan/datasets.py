"""Synthetic datasets with controllable long-range structure, plus folder loading.

All generators are bit-deterministic under a fixed spec: the PRNG is seeded
from (spec.seed, kind), so the same spec always yields the same byte stream.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import read_image

KINDS = ("mirror", "paired-dots", "gradient-blobs")


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    kind: str
    count: int
    resolution: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.resolution < 8 or self.resolution % 2:
            raise ValueError(f"resolution must be even and >= 8, got {self.resolution}")


@dataclass(frozen=True)
class FolderDataSpec:
    path: str
    resolution: int


def _rng_for(spec):
    ss = np.random.SeedSequence([int(spec.seed), zlib.crc32(spec.kind.encode("utf-8"))])
    return np.random.Generator(np.random.PCG64(ss))


def _bilinear_resize(img, out_h, out_w):
    """Channel-wise bilinear resize of a (C, h, w) array."""
    c, h, w = img.shape
    ys = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    a = img[:, y0][:, :, x0]
    b = img[:, y0][:, :, x1]
    d = img[:, y1][:, :, x0]
    e = img[:, y1][:, :, x1]
    return (1 - wy) * ((1 - wx) * a + wx * b) + wy * ((1 - wx) * d + wx * e)


def _nearest_resize(img, out_h, out_w):
    c, h, w = img.shape
    ys = np.clip(((np.arange(out_h) + 0.5) * h / out_h).astype(int), 0, h - 1)
    xs = np.clip(((np.arange(out_w) + 0.5) * w / out_w).astype(int), 0, w - 1)
    return img[:, ys][:, :, xs]


def make_synthetic_dataset(spec):
    """Images (count, 3, R, R) in [-1, 1], float32, deterministic per spec."""
    rng = _rng_for(spec)
    r = spec.resolution
    out = np.empty((spec.count, 3, r, r), dtype=np.float32)
    if spec.kind == "mirror":
        half = r // 2
        for i in range(spec.count):
            coarse = rng.uniform(-1.0, 1.0, size=(3, 4, 4))
            left = _bilinear_resize(coarse, r, half)
            out[i, :, :, :half] = left
            out[i, :, :, half:] = left[:, :, ::-1]
    elif spec.kind == "paired-dots":
        dy = int(rng.integers(-r // 4, r // 4 + 1))
        dx = int(rng.integers(1, r // 4 + 1))
        for i in range(spec.count):
            y0 = int(rng.integers(max(0, -dy), r - max(0, dy)))
            x0 = int(rng.integers(0, r - dx))
            img = np.full((3, r, r), -1.0, dtype=np.float32)
            img[:, y0, x0] = 1.0
            img[:, y0 + dy, x0 + dx] = 1.0
            out[i] = img
    else:  # gradient-blobs
        for i in range(spec.count):
            coarse = rng.uniform(-1.0, 1.0, size=(3, 4, 4))
            out[i] = _bilinear_resize(coarse, r, r)
    return np.clip(out, -1.0, 1.0, out=out)


def _read_png(path):
    try:
        from PIL import Image
    except ImportError as err:  # pragma: no cover - depends on environment
        raise ValueError(f"{path}: PNG support needs pillow (pip install lrgan[png])") from err
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr.transpose(2, 0, 1) / 127.5 - 1.0


def load_image_folder(path, resolution):
    """Decode every file in a folder (PPM, optionally PNG) to (N, 3, R, R).

    Files are taken in lexicographic order; any undecodable file is an error,
    not a silent skip. Images are center-cropped square and nearest-resized.
    """
    folder = Path(path)
    if not folder.is_dir():
        raise ValueError(f"{path} is not a directory")
    files = sorted(p for p in folder.iterdir() if p.is_file())
    if not files:
        raise ValueError(f"{path} contains no files")
    images = []
    for p in files:
        suffix = p.suffix.lower()
        try:
            if suffix == ".ppm":
                img = read_image(p)
            elif suffix == ".png":
                img = _read_png(p)
            else:
                raise ValueError(f"unsupported extension {suffix!r}")
        except ValueError as err:
            raise ValueError(f"cannot decode {p.name}: {err}") from err
        side = min(img.shape[1], img.shape[2])
        top = (img.shape[1] - side) // 2
        left = (img.shape[2] - side) // 2
        img = img[:, top : top + side, left : left + side]
        images.append(_nearest_resize(img, resolution, resolution).astype(np.float32))
    return np.stack(images)


def build_dataset(spec):
    if isinstance(spec, SyntheticDatasetSpec):
        return make_synthetic_dataset(spec)
    if isinstance(spec, FolderDataSpec):
        return load_image_folder(spec.path, spec.resolution)
    raise TypeError(f"unsupported dataset spec {type(spec).__name__}")
