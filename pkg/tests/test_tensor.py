"""Tensor engine: kernels, broadcasting, reverse pass, Adam, grad checking."""

import numpy as np
import pytest

import lrgan.tensor as T
from lrgan.gradcheck import grad_check
from lrgan.optim import AdamState, adam_step
from lrgan.tensor import NumericsError, ShapeError, Tensor, backward, precision


def test_matmul_identity():
    eye = Tensor(np.eye(2))
    m = Tensor([[1.0, 2.0], [3.0, 4.0]])
    assert np.allclose(T.matmul(eye, m).data, m.data)


def test_matmul_hand_case():
    out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    assert out.data.shape == (1, 1)
    assert out.item() == pytest.approx(11.0)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError) as exc:
        T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    assert "(2, 3)" in str(exc.value)


def test_matmul_gradient_matches_finite_differences():
    with precision("float64"):
        rng = np.random.default_rng(3)
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        err = grad_check(lambda: T.tsum(T.matmul(a, b)), [a, b])
    assert err <= 1e-6


def test_matmul_associativity_float64():
    with precision("float64"):
        rng = np.random.default_rng(7)
        for _ in range(5):
            a = Tensor(rng.standard_normal((3, 4)))
            b = Tensor(rng.standard_normal((4, 5)))
            c = Tensor(rng.standard_normal((5, 2)))
            left = T.matmul(T.matmul(a, b), c).data
            right = T.matmul(a, T.matmul(b, c)).data
            assert np.max(np.abs(left - right)) <= 1e-10


def test_conv2d_identity_kernel_is_exact_identity():
    rng = np.random.default_rng(0)
    x = Tensor(rng.standard_normal((2, 1, 4, 4)))
    k = Tensor(np.ones((1, 1, 1, 1)))
    out = T.conv2d(x, k, padding=0)
    assert np.array_equal(out.data, x.data)


def test_conv2d_summation_case():
    x = Tensor(np.ones((1, 1, 3, 3)))
    k = Tensor(np.ones((1, 1, 3, 3)))
    out = T.conv2d(x, k, padding=0)
    assert out.data.shape == (1, 1, 1, 1)
    assert out.item() == pytest.approx(9.0)


def test_conv2d_gradient_matches_finite_differences():
    with precision("float64"):
        rng = np.random.default_rng(5)
        x = Tensor(rng.standard_normal((1, 3, 5, 5)), requires_grad=True)
        k = Tensor(rng.standard_normal((4, 3, 3, 3)) * 0.5, requires_grad=True)
        proj = rng.standard_normal((1, 4, 5, 5))
        err = grad_check(lambda: T.tsum(T.conv2d(x, k) * Tensor(proj)), [x, k])
    assert err <= 1e-6


def test_conv2d_non_integral_output_is_shape_error():
    x = Tensor(np.zeros((1, 1, 6, 6)))
    k = Tensor(np.zeros((1, 1, 3, 3)))
    with pytest.raises(ShapeError, match="not integral"):
        T.conv2d(x, k, stride=2, padding=1)


def test_conv2d_channel_mismatch_error():
    with pytest.raises(ShapeError):
        T.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_softmax_uniform():
    out = T.softmax_lastdim(Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3])


def test_softmax_hand_case():
    out = T.softmax_lastdim(Tensor(np.log([1.0, 2.0, 4.0])))
    assert np.allclose(out.data, [1 / 7, 2 / 7, 4 / 7], atol=1e-6)


def test_softmax_extreme_logits_stable():
    with precision("float64"):
        out = T.softmax_lastdim(Tensor([1000.0, 0.0]))
        assert abs(out.data[0] - 1.0) <= 1e-12
        assert abs(out.data[1] - 0.0) <= 1e-12


def test_softmax_rows_sum_to_one_and_positive():
    rng = np.random.default_rng(11)
    for _ in range(20):
        x = Tensor(rng.standard_normal((4, 7)) * 10)
        out = T.softmax_lastdim(x).data
        assert np.all(out > 0)
        assert np.allclose(out.sum(axis=-1), 1.0, atol=1e-6)
    with precision("float64"):
        x = Tensor(rng.standard_normal((4, 7)) * 10)
        out = T.softmax_lastdim(x).data
        assert np.max(np.abs(out.sum(axis=-1) - 1.0)) <= 1e-12


def test_backward_sum_gives_ones():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    backward(T.tsum(x))
    assert np.array_equal(x.grad, np.ones((2, 3)))


def test_backward_quadratic_gives_two_x():
    x = Tensor(np.arange(1.0, 5.0), requires_grad=True)
    backward(T.tsum(x * x))
    assert np.allclose(x.grad, 2 * x.data)


def test_backward_requires_scalar_root():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        backward(x * 2.0)


def test_backward_accumulates_without_reset():
    x = Tensor(np.ones(3), requires_grad=True)
    y = T.tsum(x * x)
    backward(y)
    backward(y)
    assert np.allclose(x.grad, 4 * np.ones(3))


def test_backward_shared_node_visited_once():
    # diamond: z = y + y with y = x*x, so dz/dx = 4x
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = x * x
    backward(T.tsum(y + y))
    assert np.allclose(x.grad, [12.0])


def test_broadcast_gradients_reduce_correctly():
    with precision("float64"):
        a = Tensor(np.random.default_rng(0).standard_normal((2, 3)), requires_grad=True)
        b = Tensor(np.random.default_rng(1).standard_normal((3,)), requires_grad=True)
        err = grad_check(lambda: T.tsum((a + b) * (a * b)), [a, b])
    assert err <= 1e-8


def test_non_finite_fails_fast_with_op_name():
    with pytest.raises(NumericsError, match="exp"):
        T.texp(Tensor([1000.0]))
    with pytest.raises(NumericsError, match="div"):
        Tensor([1.0]) / Tensor([0.0])
    with pytest.raises(NumericsError, match="log"):
        T.tlog(Tensor([0.0]))


def test_upsample_nearest_pattern():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
    out = T.upsample_nearest(x).data[0, 0]
    expect = np.array(
        [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=out.dtype
    )
    assert np.array_equal(out, expect)


def test_upsample_sum_quadruples():
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((2, 3, 4, 4)))
    assert T.tsum(T.upsample_nearest(x)).item() == pytest.approx(4 * T.tsum(x).item(), rel=1e-5)


def test_avg_pool_then_upsample_roundtrip_on_constant():
    x = Tensor(np.full((1, 2, 4, 4), 0.7))
    pooled = T.avg_pool2d(x)
    assert np.allclose(pooled.data, 0.7)


def test_precision_mode_controls_dtype():
    assert Tensor([1.0]).data.dtype == np.float32
    with precision("float64"):
        assert Tensor([1.0]).data.dtype == np.float64
    assert Tensor([1.0]).data.dtype == np.float32
    with pytest.raises(ValueError):
        T.set_precision("float16")


def test_log_sigmoid_stable_at_extremes():
    out = T.log_sigmoid(Tensor([-1000.0, 0.0, 1000.0]))
    assert np.all(np.isfinite(out.data))
    assert out.data[1] == pytest.approx(np.log(0.5), rel=1e-6)
    assert out.data[0] == pytest.approx(-1000.0, rel=1e-6)


def test_adam_zero_grad_leaves_params_and_increments_t():
    p = Tensor(np.ones(4), requires_grad=True)
    state = AdamState.for_params([p], lr=0.01)
    before = p.data.copy()
    adam_step([p], [np.zeros(4, dtype=p.data.dtype)], state)
    assert np.array_equal(p.data, before)
    assert state.t == 1


def test_adam_first_step_moves_by_lr():
    with precision("float64"):
        p = Tensor(np.zeros(1), requires_grad=True)
        state = AdamState.for_params([p], lr=0.0002)
        adam_step([p], [np.ones(1)], state)
        assert abs(p.data[0] + 0.0002) <= 1e-9


def test_adam_constant_gradient_moves_monotonically():
    p = Tensor(np.zeros(1), requires_grad=True)
    state = AdamState.for_params([p], lr=0.01)
    adam_step([p], [np.ones(1, dtype=p.data.dtype)], state)
    first = p.data[0]
    adam_step([p], [np.ones(1, dtype=p.data.dtype)], state)
    assert p.data[0] < first < 0


def test_adam_deterministic_bitwise():
    def run():
        with precision("float64"):
            p = Tensor(np.linspace(-1, 1, 8), requires_grad=True)
            state = AdamState.for_params([p], lr=0.003)
            g = np.sin(np.arange(8.0))
            for _ in range(5):
                adam_step([p], [g], state)
            return p.data.copy()

    assert np.array_equal(run(), run())


def test_adam_shape_mismatch_error():
    p = Tensor(np.ones(4), requires_grad=True)
    state = AdamState.for_params([p])
    with pytest.raises(ShapeError):
        adam_step([p], [np.ones(5, dtype=p.data.dtype)], state)


def test_grad_check_linear_is_exact():
    with precision("float64"):
        x = Tensor(np.arange(5.0), requires_grad=True)
        err = grad_check(lambda: T.tsum(x), [x])
    assert err <= 1e-10


def test_grad_check_rejects_float32():
    x = Tensor(np.ones(3), requires_grad=True)
    with precision("float64"):
        with pytest.raises(RuntimeError, match="float64"):
            grad_check(lambda: T.tsum(x), [x])


def test_narrow_and_concat_roundtrip_gradients():
    with precision("float64"):
        x = Tensor(np.random.default_rng(4).standard_normal((2, 6)), requires_grad=True)

        def f():
            a = T.narrow(x, 1, 0, 3)
            b = T.narrow(x, 1, 3, 3)
            return T.tsum(T.concat([b, a], axis=1) * T.concat([a, b], axis=1))

        assert grad_check(f, [x]) <= 1e-8
