"""Neural building blocks: instance norm, GLU, residual / upsampling blocks,
and the self-attention layer used as an ablation replacement."""

from __future__ import annotations

from . import tensor as T
from .layers import Conv2d, Module, const_param, param
from .tensor import ShapeError


def instance_norm(x, scale, shift, eps=1e-5):
    """Per-sample, per-channel standardization over H*W, then affine."""
    if x.ndim != 4:
        raise ShapeError(f"instance_norm expects NCHW input, got {x.shape}")
    c = x.shape[1]
    if scale.shape != (c,) or shift.shape != (c,):
        raise ShapeError(
            f"instance_norm affine shapes {scale.shape}/{shift.shape} do not match {c} channels"
        )
    m = T.tmean(x, axis=(2, 3), keepdims=True)
    centered = x - m
    var = T.tmean(centered * centered, axis=(2, 3), keepdims=True)
    inv = (var + eps) ** -0.5
    normed = centered * inv
    return normed * T.reshape(scale, (1, c, 1, 1)) + T.reshape(shift, (1, c, 1, 1))


def glu(x):
    """Gated linear unit over the channel axis: first half * sigmoid(second half)."""
    if x.ndim != 4:
        raise ShapeError(f"glu expects NCHW input, got {x.shape}")
    c = x.shape[1]
    if c % 2:
        raise ShapeError(f"glu needs an even channel count, got {c}")
    a = T.narrow(x, 1, 0, c // 2)
    b = T.narrow(x, 1, c // 2, c // 2)
    return a * T.sigmoid(b)


class InstanceNorm(Module):
    def __init__(self, channels, eps=1e-5):
        self.scale = const_param(1.0, (channels,))
        self.shift = const_param(0.0, (channels,))
        self.eps = eps

    def __call__(self, x):
        return instance_norm(x, self.scale, self.shift, self.eps)


class ResidualBlock(Module):
    """conv -> IN -> GLU -> conv -> IN, added back onto the input.

    The first conv emits 2C channels so the GLU halves back to C; block convs
    carry no bias because each is followed by an instance norm.
    """

    def __init__(self, seed, name, channels):
        self.conv1 = Conv2d(seed, f"{name}.conv1", channels, 2 * channels, bias=False)
        self.norm1 = InstanceNorm(2 * channels)
        self.conv2 = Conv2d(seed, f"{name}.conv2", channels, channels, bias=False)
        self.norm2 = InstanceNorm(channels)
        self.channels = channels

    def __call__(self, x):
        if x.shape[1] != self.channels:
            raise ShapeError(f"residual block built for {self.channels} channels, got {x.shape}")
        h = glu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return x + h


class UpsampleBlock(Module):
    """nearest upsample -> IN -> conv to 2*C_out -> GLU; doubles H and W."""

    def __init__(self, seed, name, c_in, c_out):
        self.norm = InstanceNorm(c_in)
        self.conv = Conv2d(seed, f"{name}.conv", c_in, 2 * c_out, bias=False)
        self.c_in = c_in
        self.c_out = c_out

    def __call__(self, x):
        if x.shape[1] != self.c_in:
            raise ShapeError(f"upsample block built for {self.c_in} channels, got {x.shape}")
        h = T.upsample_nearest(x)
        h = self.norm(h)
        h = self.conv(h)
        return glu(h)


class SelfAttention(Module):
    """SAGAN-style self-attention with a zero-initialized mix coefficient.

    With the coefficient at its initial value the layer is exactly the
    identity, which makes the ablation comparable to the no-module model.
    """

    def __init__(self, seed, name, channels):
        qk = max(channels // 8, 1)
        vc = max(channels // 2, 1)
        self.query = Conv2d(seed, f"{name}.query", channels, qk, k=1, padding=0, bias=False)
        self.key = Conv2d(seed, f"{name}.key", channels, qk, k=1, padding=0, bias=False)
        self.value = Conv2d(seed, f"{name}.value", channels, vc, k=1, padding=0, bias=False)
        self.proj = Conv2d(seed, f"{name}.proj", vc, channels, k=1, padding=0, bias=False)
        self.mix = const_param(0.0, (1,))
        self.channels = channels

    def attention_map(self, x):
        n, c, h, w = x.shape
        q = T.reshape(self.query(x), (n, -1, h * w))
        k = T.reshape(self.key(x), (n, -1, h * w))
        logits = T.bmm(T.transpose(q, (0, 2, 1)), k)
        return T.softmax_lastdim(logits)

    def __call__(self, x):
        n, c, h, w = x.shape
        att = self.attention_map(x)
        v = T.reshape(self.value(x), (n, -1, h * w))
        attended = T.bmm(v, T.transpose(att, (0, 2, 1)))
        out = self.proj(T.reshape(attended, (n, -1, h, w)))
        return x + T.reshape(self.mix, (1, 1, 1, 1)) * out
