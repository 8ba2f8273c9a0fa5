"""Long-range modules that reweight features along the spatial or channel axis.

Each module derives a row-stochastic correlation matrix from two narrow 1x1
projections of the hidden feature, turns it into a relation vector by mixing a
learnable Gaussian-initialized weight vector, and gates the feature with that
vector (plus a residual add). Because the correlation is strictly positive and
its rows sum to one, the relation vector is a convex-style combination of the
learned weights: it keeps their signs, so negative entries survive, unlike a
softmax attention output.

The channel correlation is a bilinear form of the raw per-channel descriptors
taken through the two projected feature maps, which keeps the correlation
square in the true channel count while the projections stay narrow.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .layers import Conv2d, Module, param
from .tensor import ShapeError, Tensor

AXES = ("spatial", "channel")


def spatial_param_count(side, channels, proj_channels):
    return side * side + 2 * channels * proj_channels


def channel_param_count(channels, proj_channels):
    return channels + 2 * channels * proj_channels


def pair_param_count(side, channels, proj_channels):
    """Parameter total for one spatial plus one channel module."""
    return side * side + channels + 4 * channels * proj_channels


def default_proj_channels(channels):
    return max(channels // 8, 1)


@dataclass
class CorrelationMatrix:
    """Square row-stochastic matrix tagging which axis it correlates."""

    values: Tensor
    axis: str

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ShapeError(f"correlation matrix must be square, got {self.values.shape}")

    @property
    def side(self):
        return self.values.shape[0]


class SpatialLongRange(Module):
    """Reweights spatial positions by their aggregated correlation."""

    axis = "spatial"

    def __init__(self, seed, name, channels, side, proj_channels=None, residual=True, mode="gate"):
        proj_channels = default_proj_channels(channels) if proj_channels is None else proj_channels
        self.weights = param(seed, f"{name}.weights", (side * side,), 1.0)
        self.proj1 = Conv2d(seed, f"{name}.proj1", channels, proj_channels, k=1, padding=0, bias=False)
        self.proj2 = Conv2d(seed, f"{name}.proj2", channels, proj_channels, k=1, padding=0, bias=False)
        self.channels = channels
        self.side = side
        self.proj_channels = proj_channels
        self.residual = residual
        self.mode = mode

    def _check(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels or x.shape[2] != self.side or x.shape[3] != self.side:
            raise ShapeError(
                f"spatial long-range module built for {self.channels}x{self.side}x{self.side}, got {x.shape}"
            )

    def correlation(self, x):
        """Batched (N, HW, HW) row-stochastic correlation between positions."""
        self._check(x)
        n = x.shape[0]
        length = self.side * self.side
        a = T.reshape(self.proj1(x), (n, self.proj_channels, length))
        b = T.reshape(self.proj2(x), (n, self.proj_channels, length))
        logits = T.bmm(T.transpose(a, (0, 2, 1)), b)
        return T.softmax_lastdim(logits)

    def relation_vectors(self, corr):
        """Mix the learnable weights through the correlation: (N, HW, 1)."""
        n, length = corr.shape[0], corr.shape[1]
        col = T.broadcast_to(T.reshape(self.weights, (1, length, 1)), (n, length, 1))
        return T.bmm(T.transpose(corr, (0, 2, 1)), col)

    def __call__(self, x):
        self._check(x)
        n, c, h, w = x.shape
        length = h * w
        corr = self.correlation(x)
        vec = self.relation_vectors(corr)
        flat = T.reshape(x, (n, c, length))
        if self.mode == "gate":
            gated = flat * T.transpose(vec, (0, 2, 1))
        else:
            # literal matrix product; constant across positions by construction
            gated = T.broadcast_to(T.bmm(flat, vec), (n, c, length))
        out = T.reshape(gated, (n, c, h, w))
        return x + out if self.residual else out


class ChannelLongRange(Module):
    """Reweights channels by their aggregated correlation."""

    axis = "channel"

    def __init__(self, seed, name, channels, side, proj_channels=None, residual=True, mode="gate"):
        proj_channels = default_proj_channels(channels) if proj_channels is None else proj_channels
        self.weights = param(seed, f"{name}.weights", (channels,), 1.0)
        self.proj1 = Conv2d(seed, f"{name}.proj1", channels, proj_channels, k=1, padding=0, bias=False)
        self.proj2 = Conv2d(seed, f"{name}.proj2", channels, proj_channels, k=1, padding=0, bias=False)
        self.channels = channels
        self.side = side
        self.proj_channels = proj_channels
        self.residual = residual
        self.mode = mode

    def _check(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels or x.shape[2] != self.side or x.shape[3] != self.side:
            raise ShapeError(
                f"channel long-range module built for {self.channels}x{self.side}x{self.side}, got {x.shape}"
            )

    def correlation(self, x):
        """Batched (N, C, C) row-stochastic correlation between channels."""
        self._check(x)
        n, c = x.shape[0], x.shape[1]
        length = self.side * self.side
        raw = T.reshape(x, (n, c, length))
        a = T.reshape(self.proj1(x), (n, self.proj_channels, length))
        b = T.reshape(self.proj2(x), (n, self.proj_channels, length))
        left = T.bmm(raw, T.transpose(a, (0, 2, 1)))
        right = T.bmm(b, T.transpose(raw, (0, 2, 1)))
        return T.softmax_lastdim(T.bmm(left, right))

    def relation_vectors(self, corr):
        n, c = corr.shape[0], corr.shape[1]
        col = T.broadcast_to(T.reshape(self.weights, (1, c, 1)), (n, c, 1))
        return T.bmm(T.transpose(corr, (0, 2, 1)), col)

    def __call__(self, x):
        self._check(x)
        n, c, h, w = x.shape
        length = h * w
        corr = self.correlation(x)
        vec = self.relation_vectors(corr)
        flat = T.reshape(x, (n, c, length))
        if self.mode == "gate":
            gated = flat * vec
        else:
            dots = T.bmm(T.transpose(flat, (0, 2, 1)), vec)  # (n, HW, 1)
            gated = T.broadcast_to(T.transpose(dots, (0, 2, 1)), (n, c, length))
        out = T.reshape(gated, (n, c, h, w))
        return x + out if self.residual else out


class LongRangePair(Module):
    """Spatial module followed by the channel module at one resolution."""

    def __init__(self, seed, name, channels, side, proj_channels=None, residual=True):
        self.spatial = SpatialLongRange(seed, f"{name}.spatial", channels, side, proj_channels, residual)
        self.channel = ChannelLongRange(seed, f"{name}.channel", channels, side, proj_channels, residual)

    def __call__(self, x):
        return self.channel(self.spatial(x))


# -- single-sample functional surface ----------------------------------------


def compute_correlation(h, params, axis=None):
    """Correlation matrix for one feature map (C, H, W) under a module's params."""
    if axis is not None and axis != params.axis:
        raise ValueError(f"axis {axis!r} does not match module axis {params.axis!r}")
    if h.ndim != 3:
        raise ShapeError(f"compute_correlation expects a (C, H, W) tensor, got {h.shape}")
    batched = params.correlation(T.reshape(h, (1,) + tuple(h.shape)))
    side = batched.shape[1]
    return CorrelationMatrix(T.reshape(batched, (side, side)), params.axis)


def relation_weight(corr, weightvec):
    """Relation-aware weight matrix plus its vector form.

    The weight vector is repeated along columns, so every column of the
    resulting matrix equals corr^T @ weightvec.
    """
    values = corr.values if isinstance(corr, CorrelationMatrix) else corr
    side = values.shape[0]
    if weightvec.size != side:
        raise ShapeError(f"weight vector length {weightvec.size} != correlation side {side}")
    col = T.reshape(weightvec, (side, 1))
    repeated = T.broadcast_to(col, (side, side))
    matrix = T.matmul(T.transpose(values), repeated)
    vector = T.reshape(T.matmul(T.transpose(values), col), (side,))
    return matrix, vector


def apply_gate(h, vec, axis, residual=True, mode="gate"):
    """Scale one feature map (C, H, W) by a relation vector along an axis.

    Gate mode multiplies per position (spatial) or per channel; literal mode
    performs the dense matrix product against the column-repeated relation
    matrix, whose output is constant along the gated axis.
    """
    if axis not in AXES:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")
    if h.ndim != 3:
        raise ShapeError(f"apply_gate expects a (C, H, W) tensor, got {h.shape}")
    c, hh, ww = h.shape
    length = hh * ww
    flat = T.reshape(h, (c, length))
    expected = length if axis == "spatial" else c
    if vec.size != expected:
        raise ShapeError(f"relation vector length {vec.size} != expected {expected} for axis {axis}")
    if mode == "gate":
        if axis == "spatial":
            gated = flat * T.reshape(vec, (1, length))
        else:
            gated = flat * T.reshape(vec, (c, 1))
    elif mode == "literal":
        if axis == "spatial":
            matrix = T.broadcast_to(T.reshape(vec, (length, 1)), (length, length))
            gated = T.matmul(flat, matrix)
        else:
            matrix = T.broadcast_to(T.reshape(vec, (c, 1)), (c, c))
            gated = T.transpose(T.matmul(T.transpose(flat), matrix))
    else:
        raise ValueError(f"mode must be 'gate' or 'literal', got {mode!r}")
    out = T.reshape(gated, (c, hh, ww))
    return h + out if residual else out


def spatial_lrm_forward(h, params):
    """Batched spatial module forward; differentiable end to end."""
    return params(h)


def channel_lrm_forward(h, params):
    """Batched channel module forward; differentiable end to end."""
    return params(h)
