"""Parameterized layers and the module base class.

Every parameter is initialized from its own PCG64 stream derived from
(model seed, crc32 of the parameter's dotted name), so two models built with
the same seed share bit-identical values for every parameter they have in
common, regardless of which optional modules are present.
"""

from __future__ import annotations

import zlib

import numpy as np

from . import tensor as T
from .tensor import Tensor


def seeded_normal(seed, name, shape, std=1.0):
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    rng = np.random.Generator(np.random.PCG64(ss))
    return rng.standard_normal(shape) * std


def param(seed, name, shape, std):
    return Tensor(seeded_normal(seed, name, shape, std), requires_grad=True)


def const_param(value, shape):
    return Tensor(np.full(shape, value), requires_grad=True)


class Module:
    """Minimal container: walks its attributes to collect named parameters."""

    def params(self):
        out = {}
        for attr, value in vars(self).items():
            self._collect(attr, value, out)
        return out

    def _collect(self, prefix, value, out):
        if isinstance(value, Tensor):
            if value.requires_grad:
                out[prefix] = value
        elif isinstance(value, Module):
            for k, v in value.params().items():
                out[f"{prefix}.{k}"] = v
        elif isinstance(value, (list, tuple)):
            for i, item in enumerate(value):
                self._collect(f"{prefix}.{i}", item, out)

    def param_count(self):
        return sum(p.data.size for p in self.params().values())


class Conv2d(Module):
    """3x3-style convolution layer; padding defaults to k//2 (same, stride 1)."""

    def __init__(self, seed, name, c_in, c_out, k=3, stride=1, padding=None, bias=True, std=0.02):
        self.weight = param(seed, f"{name}.weight", (c_out, c_in, k, k), std)
        self.bias = param(seed, f"{name}.bias", (c_out,), 0.0) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x):
        y = T.conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        if self.bias is not None:
            y = y + T.reshape(self.bias, (1, -1, 1, 1))
        return y


class Dense(Module):
    def __init__(self, seed, name, d_in, d_out, bias=True, std=0.02):
        self.weight = param(seed, f"{name}.weight", (d_in, d_out), std)
        self.bias = param(seed, f"{name}.bias", (d_out,), 0.0) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y
