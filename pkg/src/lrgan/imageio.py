"""Binary PPM (P6) image encoding and decoding plus sample-grid assembly.

Pixel mapping: byte = clamp(round((v + 1) * 127.5), 0, 255) for v in [-1, 1];
reading inverts with v = byte / 127.5 - 1, so write -> read -> write is
byte-identical.
"""

from __future__ import annotations

import numpy as np

from .tensor import default_dtype


class FormatError(ValueError):
    """Malformed image file."""


def encode_bytes(image):
    """Quantize a (3, H, W) float image in [-1, 1] to interleaved RGB bytes."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise FormatError(f"expected a (3, H, W) image, got {arr.shape}")
    q = np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
    return q.transpose(1, 2, 0).tobytes()


def write_image(image, path):
    """Write a (3, H, W) image in [-1, 1] as binary PPM (P6, maxval 255)."""
    arr = np.asarray(image)
    h, w = arr.shape[1], arr.shape[2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(encode_bytes(arr))


def read_image(path):
    """Read a binary PPM into a (3, H, W) float array in [-1, 1]."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] != b"P6":
        raise FormatError(f"{path}: not a P6 PPM (magic {raw[:2]!r})")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos : pos + 1].isdigit():
            pos += 1
        if pos == start:
            raise FormatError(f"{path}: malformed header near offset {pos}")
        fields.append(int(raw[start:pos]))
    if pos >= len(raw) or not raw[pos : pos + 1].isspace():
        raise FormatError(f"{path}: missing whitespace after maxval")
    pos += 1
    w, h, maxval = fields
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 is supported, got {maxval}")
    need = w * h * 3
    payload = raw[pos : pos + need]
    if len(payload) != need:
        raise FormatError(f"{path}: expected {need} payload bytes, found {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return (pixels.transpose(2, 0, 1).astype(default_dtype()) / 127.5) - 1.0


def write_grid(images, path, cols=8):
    """Tile a stack of identically sized images into one PPM."""
    images = np.asarray(images)
    n, _, h, w = images.shape
    cols = min(cols, n)
    rows = (n + cols - 1) // cols
    grid = np.full((3, rows * h, cols * w), -1.0, dtype=images.dtype)
    for i in range(n):
        r, c = divmod(i, cols)
        grid[:, r * h : (r + 1) * h, c * w : (c + 1) * w] = images[i]
    write_image(grid, path)
