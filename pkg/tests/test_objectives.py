"""Loss functions: color statistics, color consistency, adversarial pair."""

import numpy as np
import pytest

import lrgan.tensor as T
from lrgan.gradcheck import grad_check
from lrgan.objectives import (
    LossWeights,
    color_consistency_loss,
    color_stats,
    discriminator_loss,
    generator_loss,
)
from lrgan.tensor import ShapeError, Tensor, backward, precision

W = LossWeights(1.0, 5.0, 50.0)


def test_weights_validation():
    with pytest.raises(ValueError):
        LossWeights(-1.0, 5.0, 50.0)


def test_color_stats_constant_image():
    img = np.zeros((3, 4, 4))
    img[0], img[1], img[2] = 0.3, -0.2, 0.9
    stats = color_stats(Tensor(img))
    assert np.allclose(stats.mu.data, [0.3, -0.2, 0.9], atol=1e-6)
    assert np.allclose(stats.sigma.data, 0.0, atol=1e-6)


def test_color_stats_hand_case_population_covariance():
    # pixels {(0,0,0), (1,0,0)}: mean (.5,0,0), var_red = .25, everything else 0
    img = np.zeros((3, 1, 2))
    img[0, 0, 1] = 1.0
    stats = color_stats(Tensor(img))
    assert np.allclose(stats.mu.data, [0.5, 0.0, 0.0], atol=1e-6)
    expect = np.zeros((3, 3))
    expect[0, 0] = 0.25
    assert np.allclose(stats.sigma.data, expect, atol=1e-6)


def test_color_stats_permutation_invariant():
    rng = np.random.default_rng(0)
    img = rng.uniform(-1, 1, (3, 4, 4))
    perm = rng.permutation(16)
    shuffled = img.reshape(3, 16)[:, perm].reshape(3, 4, 4)
    a, b = color_stats(Tensor(img)), color_stats(Tensor(shuffled))
    assert np.allclose(a.mu.data, b.mu.data, atol=1e-6)
    assert np.allclose(a.sigma.data, b.sigma.data, atol=1e-6)


def test_color_stats_sigma_is_psd():
    rng = np.random.default_rng(1)
    for _ in range(10):
        stats = color_stats(Tensor(rng.uniform(-1, 1, (3, 5, 5))))
        eigs = np.linalg.eigvalsh(stats.sigma.data.astype(np.float64))
        assert eigs.min() >= -1e-8


def test_color_loss_identical_batches_zero():
    rng = np.random.default_rng(2)
    batch = Tensor(rng.uniform(-1, 1, (3, 3, 8, 8)))
    assert color_consistency_loss(batch, batch, W).item() == pytest.approx(0.0, abs=1e-10)


def test_color_loss_hand_case_is_one():
    hi = np.zeros((2, 3, 8, 8))
    hi[:, 0] = 1.0  # every pixel (1, 0, 0)
    lo = np.zeros((2, 3, 4, 4))  # every pixel (0, 0, 0)
    loss = color_consistency_loss(Tensor(hi), Tensor(lo), W)
    assert loss.item() == pytest.approx(1.0, abs=1e-6)


def test_color_loss_invariant_to_pixel_permutation():
    rng = np.random.default_rng(3)
    a = rng.uniform(-1, 1, (1, 3, 4, 4))
    perm = rng.permutation(16)
    b = a.reshape(1, 3, 16)[:, :, perm].reshape(1, 3, 4, 4)
    assert color_consistency_loss(Tensor(a), Tensor(b), W).item() == pytest.approx(0.0, abs=1e-6)


def test_color_loss_batch_mismatch_rejected():
    with pytest.raises(ShapeError, match="batch"):
        color_consistency_loss(Tensor(np.zeros((2, 3, 4, 4))), Tensor(np.zeros((3, 3, 2, 2))), W)


def test_color_loss_nonnegative():
    rng = np.random.default_rng(4)
    for _ in range(10):
        hi = Tensor(rng.uniform(-1, 1, (2, 3, 4, 4)))
        lo = Tensor(rng.uniform(-1, 1, (2, 3, 2, 2)))
        assert color_consistency_loss(hi, lo, W).item() >= 0.0


def test_generator_loss_half_probability_hand_case():
    loss = generator_loss([Tensor(np.zeros(4))], [], W)
    assert loss.item() == pytest.approx(-0.5 * np.log(0.5), abs=1e-6)


def test_generator_loss_confident_discriminator_limit():
    loss = generator_loss([Tensor(np.full(4, 200.0))], [], W)
    assert 0.0 <= loss.item() <= 1e-6


def test_generator_loss_lambda3_scales_color_term():
    loss = generator_loss([Tensor(np.full(4, 200.0))], [Tensor(1.0)], W)
    assert loss.item() == pytest.approx(50.0, abs=1e-5)


def test_generator_loss_gradient_pushes_logits_up():
    for value in (-3.0, 0.0, 4.0):
        logits = Tensor(np.full(3, value), requires_grad=True)
        backward(generator_loss([logits], [], W))
        assert np.all(logits.grad < 0)


def test_discriminator_loss_zero_logits_is_k_ln2():
    for k in (1, 2, 3):
        loss = discriminator_loss([Tensor(np.zeros(4))] * k, [Tensor(np.zeros(4))] * k)
        assert loss.item() == pytest.approx(k * np.log(2.0), abs=1e-6)


def test_discriminator_loss_optimum_limit():
    loss = discriminator_loss([Tensor(np.full(3, 200.0))], [Tensor(np.full(3, -200.0))])
    assert 0.0 <= loss.item() <= 1e-6


def test_discriminator_loss_symmetric_at_zero():
    real, fake = Tensor(np.zeros(5)), Tensor(np.zeros(5))
    assert discriminator_loss([real], [fake]).item() == pytest.approx(
        discriminator_loss([fake], [real]).item()
    )


def test_losses_finite_for_extreme_logits():
    big = Tensor(np.array([1e4, -1e4, 0.0]))
    assert np.isfinite(generator_loss([big], [], W).item())
    assert np.isfinite(discriminator_loss([big], [big]).item())


def test_loss_gradients_match_finite_differences():
    with precision("float64"):
        rng = np.random.default_rng(5)
        hi = Tensor(rng.uniform(-0.5, 0.5, (2, 3, 4, 4)), requires_grad=True)
        lo = Tensor(rng.uniform(-0.5, 0.5, (2, 3, 2, 2)), requires_grad=True)
        assert grad_check(lambda: color_consistency_loss(hi, lo, W), [hi, lo]) <= 1e-6

        logits = [Tensor(rng.standard_normal(3), requires_grad=True) for _ in range(2)]
        ref = Tensor(rng.uniform(-0.5, 0.5, (2, 3, 2, 2)))
        colors = Tensor(rng.uniform(-0.5, 0.5, (2, 3, 2, 2)), requires_grad=True)

        def gen_f():
            return generator_loss(logits, [color_consistency_loss(colors, ref, W)], W)

        assert grad_check(gen_f, logits + [colors]) <= 1e-6

        real = [Tensor(rng.standard_normal(3), requires_grad=True) for _ in range(2)]
        fake = [Tensor(rng.standard_normal(3), requires_grad=True) for _ in range(2)]
        assert grad_check(lambda: discriminator_loss(real, fake), real + fake) <= 1e-6
