"""Float64 gradient-check suite shared by the CLI and the acceptance tests.

Every differentiable op and composite block is checked against central finite
differences over several random small shapes. Outputs are reduced to a scalar
through a fixed random projection so the whole Jacobian is exercised, not
just its row sums.
"""

from __future__ import annotations

import zlib

import numpy as np

from . import tensor as T
from .blocks import ResidualBlock, SelfAttention, UpsampleBlock, glu, instance_norm
from .gradcheck import grad_check
from .longrange import ChannelLongRange, SpatialLongRange
from .model import Discriminator
from .objectives import LossWeights, color_consistency_loss, discriminator_loss, generator_loss
from .tensor import Tensor, precision

GRAD_TOL = 1e-5


def _rng(tag, i):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([17, zlib.crc32(tag.encode()), i])))


def _tensor(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _projected(out, proj):
    return T.tsum(out * Tensor(proj))


def _randomize(block, rng, std=0.5):
    # default init std (0.02) leaves block activations tiny, which makes the
    # instance-norm curvature too steep for finite differences at h=1e-5
    for p in block.params().values():
        p.data = rng.standard_normal(p.data.shape) * std
    return block


def _check_variants(builders):
    worst = 0.0
    for build in builders:
        f, params = build()
        worst = max(worst, grad_check(f, params))
    return worst


def _unary_block(name, make_block, shapes):
    def builders():
        out = []
        for i, shape in enumerate(shapes):
            def build(i=i, shape=shape):
                rng = _rng(name, i)
                block = make_block(rng, shape)
                x = _tensor(rng, shape)
                proj = rng.standard_normal(block(x).shape)
                params = list(block.params().values()) + [x] if hasattr(block, "params") else [x]
                return (lambda: _projected(block(x), proj)), params
            out.append(build)
        return out

    return name, builders()


def suite():
    """(name, builders) pairs; each builder yields (f, params) for grad_check."""
    checks = []

    def matmul_builders():
        out = []
        for i, (m, k, n) in enumerate([(2, 3, 2), (1, 4, 3), (3, 2, 4), (4, 4, 1), (2, 5, 2)]):
            def build(i=i, m=m, k=k, n=n):
                rng = _rng("matmul", i)
                a = _tensor(rng, (m, k))
                b = _tensor(rng, (k, n))
                proj = rng.standard_normal((m, n))
                return (lambda: _projected(T.matmul(a, b), proj)), [a, b]
            out.append(build)
        return out

    checks.append(("matmul", matmul_builders()))

    def softmax_builders():
        out = []
        for i, shape in enumerate([(3,), (2, 4), (1, 5), (2, 2, 3), (4, 2)]):
            def build(i=i, shape=shape):
                rng = _rng("softmax", i)
                x = _tensor(rng, shape)
                proj = rng.standard_normal(shape)
                return (lambda: _projected(T.softmax_lastdim(x), proj)), [x]
            out.append(build)
        return out

    checks.append(("softmax_lastdim", softmax_builders()))

    def elementwise_builders():
        out = []
        for i, shape in enumerate([(3,), (2, 3), (4,), (2, 2, 2), (5,)]):
            def build(i=i, shape=shape):
                rng = _rng("elementwise", i)
                a = _tensor(rng, shape)
                b = _tensor(rng, shape)
                c = _tensor(rng, shape, 0.5)

                def f():
                    mix = T.tanh(a) * T.sigmoid(b) + T.tlog(T.texp(c) + 1.5)
                    return T.tsum(mix / (a * a + 1.0) + (b + 2.5) ** 1.5 - T.log_sigmoid(c))

                return f, [a, b, c]
            out.append(build)
        return out

    checks.append(("elementwise", elementwise_builders()))

    def resample_builders():
        out = []
        for i, shape in enumerate([(1, 2, 2, 2), (2, 1, 4, 4), (1, 3, 2, 4), (2, 2, 2, 2), (1, 1, 6, 6)]):
            def build(i=i, shape=shape):
                rng = _rng("resample", i)
                x = _tensor(rng, shape)
                proj = rng.standard_normal(shape)

                def f():
                    return T.tsum(T.avg_pool2d(T.upsample_nearest(x)) * Tensor(proj))

                return f, [x]
            out.append(build)
        return out

    checks.append(("resampling", resample_builders()))

    def conv_builders():
        cases = [
            ((1, 2, 5, 5), (3, 2, 3, 3), 1, 1),
            ((2, 3, 4, 4), (2, 3, 1, 1), 1, 0),
            ((1, 2, 6, 6), (2, 2, 4, 4), 2, 1),
            ((1, 1, 5, 5), (2, 1, 3, 3), 1, 0),
            ((2, 2, 4, 4), (1, 2, 2, 2), 2, 0),
        ]
        out = []
        for i, (xs, ks, stride, pad) in enumerate(cases):
            def build(i=i, xs=xs, ks=ks, stride=stride, pad=pad):
                rng = _rng("conv2d", i)
                x = _tensor(rng, xs)
                k = _tensor(rng, ks, 0.5)
                sample = T.conv2d(x, k, stride=stride, padding=pad)
                proj = rng.standard_normal(sample.shape)
                return (lambda: _projected(T.conv2d(x, k, stride=stride, padding=pad), proj)), [x, k]
            out.append(build)
        return out

    checks.append(("conv2d", conv_builders()))

    def inorm_builders():
        out = []
        for i, shape in enumerate([(1, 2, 3, 3), (2, 3, 2, 4), (1, 1, 4, 4), (2, 2, 3, 2), (1, 4, 2, 2)]):
            def build(i=i, shape=shape):
                rng = _rng("instance_norm", i)
                x = _tensor(rng, shape)
                scale = _tensor(rng, (shape[1],), 0.5)
                shift = _tensor(rng, (shape[1],), 0.5)
                proj = rng.standard_normal(shape)
                return (lambda: _projected(instance_norm(x, scale, shift), proj)), [x, scale, shift]
            out.append(build)
        return out

    checks.append(("instance_norm", inorm_builders()))

    def glu_builders():
        out = []
        for i, shape in enumerate([(1, 2, 3, 3), (2, 4, 2, 2), (1, 6, 2, 3), (2, 2, 4, 2), (1, 8, 2, 2)]):
            def build(i=i, shape=shape):
                rng = _rng("glu", i)
                x = _tensor(rng, shape)
                proj = rng.standard_normal((shape[0], shape[1] // 2) + shape[2:])
                return (lambda: _projected(glu(x), proj)), [x]
            out.append(build)
        return out

    checks.append(("glu", glu_builders()))

    checks.append(
        _unary_block(
            "residual_block",
            lambda rng, shape: _randomize(ResidualBlock(int(rng.integers(1 << 30)), "check.res", shape[1]), rng),
            [(1, 2, 3, 3), (2, 3, 3, 3), (1, 4, 2, 2), (1, 2, 4, 4), (2, 2, 2, 2)],
        )
    )

    def upsample_builders():
        cases = [((1, 2, 2, 2), 2), ((2, 3, 2, 2), 2), ((1, 4, 3, 3), 3), ((1, 2, 3, 3), 4), ((2, 2, 2, 2), 1)]
        out = []
        for i, (shape, c_out) in enumerate(cases):
            def build(i=i, shape=shape, c_out=c_out):
                rng = _rng("upsample_block", i)
                block = _randomize(UpsampleBlock(int(rng.integers(1 << 30)), "check.up", shape[1], c_out), rng)
                x = _tensor(rng, shape)
                proj = rng.standard_normal((shape[0], c_out, shape[2] * 2, shape[3] * 2))
                return (lambda: _projected(block(x), proj)), list(block.params().values()) + [x]
            out.append(build)
        return out

    checks.append(("upsample_block", upsample_builders()))

    checks.append(
        _unary_block(
            "self_attention",
            lambda rng, shape: _nonzero_mix(SelfAttention(int(rng.integers(1 << 30)), "check.sa", shape[1])),
            [(1, 2, 3, 3), (2, 4, 2, 2), (1, 8, 2, 2), (1, 2, 2, 4), (2, 2, 3, 2)],
        )
    )

    checks.append(
        _unary_block(
            "spatial_longrange",
            lambda rng, shape: SpatialLongRange(int(rng.integers(1 << 30)), "check.slr", shape[1], shape[2]),
            [(1, 2, 3, 3), (2, 4, 2, 2), (1, 8, 2, 2), (1, 3, 3, 3), (2, 2, 4, 4)],
        )
    )

    checks.append(
        _unary_block(
            "channel_longrange",
            lambda rng, shape: ChannelLongRange(int(rng.integers(1 << 30)), "check.clr", shape[1], shape[2]),
            [(1, 2, 3, 3), (2, 4, 2, 2), (1, 8, 2, 2), (1, 3, 3, 3), (2, 2, 4, 4)],
        )
    )

    def color_builders():
        out = []
        for i, (n, size) in enumerate([(2, 4), (1, 4), (3, 2), (2, 2), (1, 6)]):
            def build(i=i, n=n, size=size):
                rng = _rng("color_loss", i)
                hi = _tensor(rng, (n, 3, size, size), 0.5)
                lo = _tensor(rng, (n, 3, size // 2, size // 2), 0.5)
                weights = LossWeights(1.0, 5.0, 50.0)
                return (lambda: color_consistency_loss(hi, lo, weights)), [hi, lo]
            out.append(build)
        return out

    checks.append(("color_consistency_loss", color_builders()))

    def gen_loss_builders():
        out = []
        for i, (stages, n) in enumerate([(1, 3), (2, 2), (3, 2), (2, 4), (3, 3)]):
            def build(i=i, stages=stages, n=n):
                rng = _rng("generator_loss", i)
                logits = [_tensor(rng, (n,)) for _ in range(stages)]
                colors = [_tensor(rng, (n, 3, 2, 2), 0.3) for _ in range(stages - 1)]
                references = [Tensor(rng.standard_normal((n, 3, 2, 2)) * 0.3) for _ in range(stages - 1)]
                weights = LossWeights(1.0, 5.0, 50.0)

                def f():
                    closses = [
                        color_consistency_loss(c, ref, weights) for c, ref in zip(colors, references)
                    ]
                    return generator_loss(logits, closses, weights)

                return f, logits + colors
            out.append(build)
        return out

    checks.append(("generator_loss", gen_loss_builders()))

    def disc_loss_builders():
        out = []
        for i, (stages, n) in enumerate([(1, 3), (2, 2), (3, 2), (2, 4), (1, 5)]):
            def build(i=i, stages=stages, n=n):
                rng = _rng("discriminator_loss", i)
                real = [_tensor(rng, (n,)) for _ in range(stages)]
                fake = [_tensor(rng, (n,)) for _ in range(stages)]
                return (lambda: discriminator_loss(real, fake)), real + fake
            out.append(build)
        return out

    checks.append(("discriminator_loss", disc_loss_builders()))

    def disc_model_builders():
        out = []
        for i in range(5):
            def build(i=i):
                rng = _rng("discriminator_model", i)
                disc = Discriminator(int(rng.integers(1 << 30)), "check.disc", 8, base=4, cap=8)
                x = _tensor(rng, (2, 3, 8, 8), 0.5)
                return (lambda: T.tsum(disc(x))), list(disc.params().values()) + [x]
            out.append(build)
        return out

    checks.append(("discriminator_model", disc_model_builders()))
    return checks


def _nonzero_mix(block):
    # the mix coefficient starts at zero, which would hide the attention path
    block.mix.data = block.mix.data + 0.5
    return block


def run_gradcheck_suite():
    """All checks in float64 mode; returns [(name, max relative error)]."""
    results = []
    with precision("float64"):
        for name, builders in suite():
            results.append((name, _check_variants(builders)))
    return results
