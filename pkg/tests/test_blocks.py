"""Neural blocks: instance norm, GLU, residual/upsample blocks, self-attention."""

import numpy as np
import pytest

import lrgan.tensor as T
from lrgan.blocks import InstanceNorm, ResidualBlock, SelfAttention, UpsampleBlock, glu, instance_norm
from lrgan.gradcheck import grad_check
from lrgan.tensor import ShapeError, Tensor, precision


def _rand(shape, seed=0, std=1.0):
    return Tensor(np.random.default_rng(seed).standard_normal(shape) * std, requires_grad=True)


def test_instance_norm_constant_channel_is_zero():
    x = Tensor(np.full((1, 2, 3, 3), 5.0))
    out = instance_norm(x, Tensor(np.ones(2)), Tensor(np.zeros(2)))
    assert np.allclose(out.data, 0.0)


def test_instance_norm_standardized_input_passes_through():
    x = Tensor(np.array([-1.0, 1.0]).reshape(1, 1, 1, 2))
    out = instance_norm(x, Tensor(np.ones(1)), Tensor(np.zeros(1)))
    assert np.allclose(out.data, x.data, atol=1e-4)


def test_instance_norm_normalizes_mean_and_variance():
    rng = np.random.default_rng(9)
    x = Tensor(rng.standard_normal((2, 3, 5, 5)) * 4 + 2)
    out = instance_norm(x, Tensor(np.ones(3)), Tensor(np.zeros(3))).data
    assert np.allclose(out.mean(axis=(2, 3)), 0.0, atol=1e-5)
    assert np.allclose(out.var(axis=(2, 3)), 1.0, atol=1e-3)


def test_instance_norm_gradients():
    with precision("float64"):
        x = _rand((1, 2, 3, 3), 1)
        scale = _rand((2,), 2, 0.5)
        shift = _rand((2,), 3, 0.5)
        proj = np.random.default_rng(4).standard_normal((1, 2, 3, 3))
        err = grad_check(lambda: T.tsum(instance_norm(x, scale, shift) * Tensor(proj)), [x, scale, shift])
    assert err <= 1e-6


def test_glu_zero_gate_halves_values():
    a = np.random.default_rng(0).standard_normal((1, 2, 3, 3))
    x = Tensor(np.concatenate([a, np.zeros_like(a)], axis=1))
    assert np.allclose(glu(x).data, 0.5 * a, atol=1e-6)


def test_glu_zero_values_give_zero():
    b = np.random.default_rng(1).standard_normal((1, 2, 3, 3))
    x = Tensor(np.concatenate([np.zeros_like(b), b], axis=1))
    assert np.allclose(glu(x).data, 0.0)


def test_glu_halves_channels():
    for c in (2, 4, 6, 8):
        x = Tensor(np.zeros((1, c, 2, 2)))
        assert glu(x).shape[1] == c // 2


def test_glu_odd_channels_rejected():
    with pytest.raises(ShapeError, match="even"):
        glu(Tensor(np.zeros((1, 3, 2, 2))))


def test_glu_gradients():
    with precision("float64"):
        x = _rand((2, 4, 2, 3), 5)
        proj = np.random.default_rng(6).standard_normal((2, 2, 2, 3))
        err = grad_check(lambda: T.tsum(glu(x) * Tensor(proj)), [x])
    assert err <= 1e-6


def test_residual_block_zero_branch_is_identity():
    block = ResidualBlock(0, "t.res", 4)
    for p in [block.conv1.weight, block.conv2.weight]:
        p.data = np.zeros_like(p.data)
    x = Tensor(np.random.default_rng(3).standard_normal((1, 4, 3, 3)))
    assert np.allclose(block(x).data, x.data)


def test_residual_block_shape_contract():
    block = ResidualBlock(0, "t.res", 8)
    x = Tensor(np.random.default_rng(4).standard_normal((1, 8, 4, 4)))
    assert block(x).shape == (1, 8, 4, 4)
    with pytest.raises(ShapeError):
        block(Tensor(np.zeros((1, 4, 4, 4))))


def test_residual_block_skip_is_pure_addition():
    block = ResidualBlock(1, "t.res", 4)
    x = Tensor(np.random.default_rng(5).standard_normal((2, 4, 3, 3)))
    residual = block(x).data - x.data
    block2 = ResidualBlock(1, "t.res", 4)  # same seed, same params
    assert np.allclose(block2(x).data - x.data, residual)


def test_residual_block_gradients():
    with precision("float64"):
        block = ResidualBlock(2, "t.res", 3)
        rng = np.random.default_rng(7)
        for p in block.params().values():
            p.data = rng.standard_normal(p.data.shape) * 0.5
        x = _rand((1, 3, 3, 3), 8)
        proj = rng.standard_normal((1, 3, 3, 3))
        params = list(block.params().values()) + [x]
        err = grad_check(lambda: T.tsum(block(x) * Tensor(proj)), params)
    assert err <= 1e-5


def test_upsample_block_shape_contract():
    block = UpsampleBlock(0, "t.up", 8, 3)
    x = Tensor(np.random.default_rng(0).standard_normal((1, 8, 4, 4)))
    assert block(x).shape == (1, 3, 8, 8)


def test_upsample_block_zero_kernel_gives_zero():
    block = UpsampleBlock(0, "t.up", 4, 2)
    block.conv.weight.data = np.zeros_like(block.conv.weight.data)
    x = Tensor(np.random.default_rng(1).standard_normal((2, 4, 3, 3)))
    assert np.allclose(block(x).data, 0.0)


def test_upsample_block_gradients():
    with precision("float64"):
        block = UpsampleBlock(3, "t.up", 2, 2)
        rng = np.random.default_rng(9)
        for p in block.params().values():
            p.data = rng.standard_normal(p.data.shape) * 0.5
        x = _rand((1, 2, 2, 2), 10)
        proj = rng.standard_normal((1, 2, 4, 4))
        params = list(block.params().values()) + [x]
        err = grad_check(lambda: T.tsum(block(x) * Tensor(proj)), params)
    assert err <= 1e-5


def test_self_attention_zero_mix_is_exact_identity():
    block = SelfAttention(0, "t.sa", 8)
    x = Tensor(np.random.default_rng(2).standard_normal((2, 8, 4, 4)))
    assert np.array_equal(block(x).data, x.data)


def test_self_attention_map_is_row_stochastic_positive():
    block = SelfAttention(1, "t.sa", 8)
    rng = np.random.default_rng(3)
    for _ in range(10):
        x = Tensor(rng.standard_normal((1, 8, 3, 3)) * 3)
        att = block.attention_map(x).data
        assert np.all(att > 0)
        assert np.allclose(att.sum(axis=-1), 1.0, atol=1e-6)


def test_self_attention_gradients():
    with precision("float64"):
        block = SelfAttention(4, "t.sa", 4)
        block.mix.data = block.mix.data + 0.5
        x = _rand((1, 4, 3, 3), 11)
        proj = np.random.default_rng(12).standard_normal((1, 4, 3, 3))
        params = list(block.params().values()) + [x]
        err = grad_check(lambda: T.tsum(block(x) * Tensor(proj)), params)
    assert err <= 1e-5


def test_blocks_preserve_finiteness():
    rng = np.random.default_rng(13)
    x = Tensor(rng.standard_normal((2, 4, 4, 4)) * 10)
    for block in [
        ResidualBlock(5, "t.res", 4),
        UpsampleBlock(5, "t.up", 4, 4),
        SelfAttention(5, "t.sa", 4),
        InstanceNorm(4),
    ]:
        assert np.all(np.isfinite(block(x).data))
