"""Autodiff core: op semantics, gradients vs finite differences, invariants."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from srforge.rng import SeededRng
from srforge.tensor import (GradTape, Parameter, ShapeError, Tensor, add,
                            bilinear_upsample2x, concat_channels, conv2d, detach,
                            leaky_relu, mean_abs_diff, mean_all, mul,
                            nearest_upsample, pixel_shuffle, pixel_unshuffle,
                            reciprocal, reshape, scale, softplus, sub, sum_all)

from conftest import check_op_gradients, rand_tensor


class TestConv2d:
    def test_identity_kernel(self, rng64):
        x = rand_tensor(rng64, (1, 1, 4, 5), requires_grad=False)
        w = Tensor(np.ones((1, 1, 1, 1)))
        out = conv2d(x, w)
        assert np.array_equal(out.data, x.data)

    def test_ones_overlap_counts(self):
        """3x3 all-ones kernel on all-ones 3x3 input, pad 1: overlap counts."""
        x = Tensor(np.ones((1, 1, 3, 3), dtype=np.float64))
        w = Tensor(np.ones((1, 1, 3, 3), dtype=np.float64))
        out = conv2d(x, w, stride=1, padding=1)
        expected = np.array([[4, 6, 4], [6, 9, 6], [4, 6, 4]], dtype=np.float64)
        assert np.array_equal(out.data[0, 0], expected)

    def test_output_size_formula(self, rng64):
        x = rand_tensor(rng64, (2, 3, 11, 9), requires_grad=False)
        w = rand_tensor(rng64, (4, 3, 4, 3), requires_grad=False)
        out = conv2d(x, w, stride=2, padding=1)
        assert out.shape == (2, 4, (11 + 2 - 4) // 2 + 1, (9 + 2 - 3) // 2 + 1)

    def test_gradients_vs_finite_differences(self, rng64):
        x = rand_tensor(rng64, (1, 2, 5, 5))
        w = rand_tensor(rng64, (3, 2, 3, 3))
        b = rand_tensor(rng64, (3,))
        err = check_op_gradients(
            lambda: mean_all(conv2d(x, w, b, stride=1, padding=1)), [x, w, b], rng64)
        assert err < 1e-3

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 1), (2, 0), (3, 2)])
    def test_gradients_strided(self, rng64, stride, padding):
        x = rand_tensor(rng64, (1, 2, 8, 7))
        w = rand_tensor(rng64, (2, 2, 3, 3))
        err = check_op_gradients(
            lambda: mean_all(conv2d(x, w, None, stride=stride, padding=padding)),
            [x, w], rng64)
        assert err < 1e-3

    def test_channel_mismatch_message(self, rng64):
        x = rand_tensor(rng64, (1, 3, 4, 4), requires_grad=False)
        w = rand_tensor(rng64, (2, 4, 3, 3), requires_grad=False)
        with pytest.raises(ShapeError, match="3 channels.*expects 4"):
            conv2d(x, w)

    def test_kernel_too_large(self, rng64):
        x = rand_tensor(rng64, (1, 1, 3, 3), requires_grad=False)
        w = rand_tensor(rng64, (1, 1, 5, 5), requires_grad=False)
        with pytest.raises(ShapeError, match="kernel 5x5"):
            conv2d(x, w)


class TestLeakyRelu:
    def test_definition(self):
        x = Tensor(np.array([-1.0, 0.0, 2.0]))
        out = leaky_relu(x, 0.2)
        assert np.allclose(out.data, [-0.2, 0.0, 2.0])

    def test_zero_slope_is_relu(self):
        x = Tensor(np.array([-5.0, -0.1, 0.3]))
        assert np.allclose(leaky_relu(x, 0.0).data, [0.0, 0.0, 0.3])

    def test_all_negative_zero_slope(self):
        x = Tensor(-np.ones((1, 1, 2, 2)))
        assert np.all(leaky_relu(x, 0.0).data == 0)

    def test_invalid_slope(self):
        with pytest.raises(ValueError):
            leaky_relu(Tensor(np.zeros(2)), 1.0)

    def test_gradient(self, rng64):
        x = rand_tensor(rng64, (1, 2, 4, 4))
        x.data += np.where(x.data >= 0, 0.05, -0.05)  # keep away from the kink
        err = check_op_gradients(lambda: mean_all(leaky_relu(x, 0.2)), [x], rng64)
        assert err < 1e-3


class TestUpsampling:
    def test_nearest_replication(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        out = nearest_upsample(x, 2)
        expected = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
        assert np.array_equal(out.data[0, 0], expected)

    def test_factor_one_identity(self, rng64):
        x = rand_tensor(rng64, (1, 2, 3, 3), requires_grad=False)
        assert nearest_upsample(x, 1) is x

    def test_backward_sums_replicas(self):
        x = Tensor(np.zeros((1, 1, 2, 2)), requires_grad=True)
        with GradTape() as tape:
            loss = sum_all(nearest_upsample(x, 3))
            grads = tape.backward(loss)
        assert np.all(grads.get(x) == 9.0)

    def test_bilinear2x_gradient(self, rng64):
        x = rand_tensor(rng64, (1, 2, 4, 5))
        err = check_op_gradients(lambda: mean_all(bilinear_upsample2x(x)), [x], rng64)
        assert err < 1e-3

    def test_bilinear2x_constant(self):
        x = Tensor(np.full((1, 1, 3, 3), 0.7))
        out = bilinear_upsample2x(x)
        assert out.shape == (1, 1, 6, 6)
        assert np.allclose(out.data, 0.7)


class TestPixelUnshuffle:
    def test_factor_one_identity(self, rng64):
        x = rand_tensor(rng64, (1, 2, 4, 4), requires_grad=False)
        assert pixel_unshuffle(x, 1) is x

    def test_channel_order_row_major(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2))
        out = pixel_unshuffle(x, 2)
        assert out.shape == (1, 4, 1, 1)
        assert np.array_equal(out.data.reshape(4), [1, 2, 3, 4])

    def test_round_trip_bit_exact(self, rng64):
        x = rand_tensor(rng64, (2, 3, 8, 12), requires_grad=False)
        back = pixel_shuffle(pixel_unshuffle(x, 2), 2)
        assert np.array_equal(back.data, x.data)

    def test_non_divisible_error(self, rng64):
        with pytest.raises(ShapeError):
            pixel_unshuffle(rand_tensor(rng64, (1, 1, 5, 4), requires_grad=False), 2)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 3), st.integers(1, 3),
           st.sampled_from([1, 2, 3]))
    def test_bijection_preserves_multiset(self, n, c, hb, wb, f):
        rng = SeededRng(n * 1000 + c * 100 + hb * 10 + wb)
        x = rand_tensor(rng, (n, c, hb * f, wb * f), requires_grad=False)
        out = pixel_unshuffle(x, f)
        assert np.array_equal(np.sort(out.data.ravel()), np.sort(x.data.ravel()))

    def test_gradient_is_permutation(self, rng64):
        x = rand_tensor(rng64, (1, 1, 4, 4))
        c = rand_tensor(rng64, (1, 4, 2, 2), requires_grad=False)
        err = check_op_gradients(lambda: mean_all(mul(pixel_unshuffle(x, 2), c)),
                                 [x], rng64)
        assert err < 1e-3


class TestElementwise:
    def test_mean_abs_diff_identical(self, rng64):
        x = rand_tensor(rng64, (2, 1, 3, 3), requires_grad=False)
        assert mean_abs_diff(x, x).item() == 0.0

    def test_mean_abs_diff_value(self):
        a = Tensor(np.array([0.0, 0.0]))
        b = Tensor(np.array([1.0, 3.0]))
        assert mean_abs_diff(a, b).item() == 2.0

    def test_concat_preserves_order(self, rng64):
        a = rand_tensor(rng64, (1, 3, 2, 2), requires_grad=False)
        b = rand_tensor(rng64, (1, 1, 2, 2), requires_grad=False)
        out = concat_channels([a, b])
        assert out.shape == (1, 4, 2, 2)
        assert np.array_equal(out.data[:, :3], a.data)
        assert np.array_equal(out.data[:, 3:], b.data)

    def test_concat_incompatible(self, rng64):
        a = rand_tensor(rng64, (1, 1, 2, 2), requires_grad=False)
        b = rand_tensor(rng64, (1, 1, 3, 2), requires_grad=False)
        with pytest.raises(ShapeError):
            concat_channels([a, b])

    def test_shape_mismatch_errors(self, rng64):
        a = rand_tensor(rng64, (1, 1, 2, 2), requires_grad=False)
        b = rand_tensor(rng64, (1, 1, 2, 3), requires_grad=False)
        for op in (add, sub, mul, mean_abs_diff):
            with pytest.raises(ShapeError):
                op(a, b)

    def test_scalar_broadcast(self, rng64):
        a = rand_tensor(rng64, (1, 1, 2, 2), requires_grad=False)
        s = Tensor(np.asarray(2.0))
        assert np.allclose(mul(a, s).data, a.data * 2.0)
        assert np.allclose(add(a, s).data, a.data + 2.0)

    def test_elementwise_gradients(self, rng64):
        a = rand_tensor(rng64, (1, 2, 3, 3))
        b = rand_tensor(rng64, (1, 2, 3, 3))
        b.data += np.sign(b.data - a.data) * 0.1  # keep |a-b| away from 0
        err = check_op_gradients(
            lambda: mean_abs_diff(mul(a, b), scale(sub(a, b), 0.3)), [a, b], rng64)
        assert err < 1e-3

    def test_softplus_reciprocal_gradients(self, rng64):
        a = rand_tensor(rng64, (1, 1, 3, 3))
        err = check_op_gradients(
            lambda: mean_all(mul(softplus(a), reciprocal(sum_all(softplus(a))))),
            [a], rng64)
        assert err < 1e-3

    def test_softplus_no_overflow(self):
        x = Tensor(np.array([-80.0, 0.0, 80.0]))
        out = softplus(x)
        assert np.all(np.isfinite(out.data))
        assert out.data[1] == pytest.approx(np.log(2.0))
        assert out.data[2] == pytest.approx(80.0)


class TestBackward:
    def test_mean_gradient_uniform(self, rng64):
        x = rand_tensor(rng64, (1, 1, 4, 4))
        with GradTape() as tape:
            grads = tape.backward(mean_all(x))
        assert np.allclose(grads.get(x), 1.0 / 16.0)

    def test_product_rule(self, rng64):
        x = rand_tensor(rng64, (1, 1, 3, 3))
        y = rand_tensor(rng64, (1, 1, 3, 3))
        with GradTape() as tape:
            grads = tape.backward(sum_all(mul(x, y)))
        assert np.allclose(grads.get(x), y.data)
        assert np.allclose(grads.get(y), x.data)

    def test_composite_chain_finite_differences(self, rng64):
        x = rand_tensor(rng64, (1, 2, 6, 6))
        w = rand_tensor(rng64, (3, 2, 3, 3))
        err = check_op_gradients(
            lambda: mean_all(leaky_relu(conv2d(x, w, None, 1, 1), 0.2)), [x, w], rng64)
        assert err < 1e-3

    def test_non_scalar_loss_rejected(self, rng64):
        x = rand_tensor(rng64, (1, 1, 2, 2))
        with GradTape() as tape:
            y = scale(x, 2.0)
            with pytest.raises(ShapeError):
                tape.backward(y)

    def test_unused_parameter_gets_zeros(self, rng64):
        x = rand_tensor(rng64, (1, 1, 2, 2))
        unused = rand_tensor(rng64, (3,))
        with GradTape() as tape:
            grads = tape.backward(mean_all(x))
        assert np.array_equal(grads.get(unused), np.zeros(3))

    def test_linearity_exact_in_f64(self, rng64):
        x = rand_tensor(rng64, (1, 2, 4, 4))
        w = rand_tensor(rng64, (2, 2, 3, 3))

        def loss_fn(factor):
            with GradTape() as tape:
                loss = scale(mean_all(conv2d(x, w, None, 1, 1)), factor)
                return tape.backward(loss).get(w)

        g1 = loss_fn(1.0)
        g4 = loss_fn(4.0)
        assert np.array_equal(g4, 4.0 * g1)

    def test_determinism_bit_identical(self, rng64):
        x = rand_tensor(rng64, (2, 3, 8, 8), requires_grad=False, dtype=np.float32)
        w = rand_tensor(rng64, (4, 3, 3, 3), requires_grad=False, dtype=np.float32)
        a = conv2d(x, w, None, 1, 1)
        b = conv2d(x, w, None, 1, 1)
        assert np.array_equal(a.data, b.data)

    def test_gradient_shapes_match(self, rng64):
        x = rand_tensor(rng64, (1, 2, 4, 4))
        w = rand_tensor(rng64, (2, 2, 3, 3))
        b = rand_tensor(rng64, (2,))
        with GradTape() as tape:
            grads = tape.backward(mean_all(conv2d(x, w, b, 1, 1)))
        for t in (x, w, b):
            assert grads.get(t).shape == t.data.shape

    def test_detach_blocks_gradient(self, rng64):
        x = rand_tensor(rng64, (1, 1, 2, 2))
        with GradTape() as tape:
            grads = tape.backward(mean_all(detach(x)))
        assert np.array_equal(grads.get(x), np.zeros_like(x.data))

    def test_finite_outputs_on_finite_inputs(self, rng64):
        x = rand_tensor(rng64, (1, 3, 8, 8), requires_grad=False)
        w = rand_tensor(rng64, (4, 3, 3, 3), requires_grad=False)
        out = softplus(leaky_relu(conv2d(x, w, None, 2, 1), 0.2))
        assert np.all(np.isfinite(out.data))

    def test_nested_tape_rejected(self):
        with GradTape():
            with pytest.raises(RuntimeError):
                GradTape().__enter__()


class TestParameter:
    def test_grad_buffer_zero_initialized(self):
        p = Parameter("conv.weight", np.ones((2, 2), dtype=np.float32))
        assert p.grad.shape == (2, 2)
        assert np.all(p.grad == 0)
        assert p.value.requires_grad

    def test_reshape_roundtrip_gradient(self, rng64):
        x = rand_tensor(rng64, (1, 1, 2, 6))
        c = rand_tensor(rng64, (1, 3, 2, 2), requires_grad=False)
        err = check_op_gradients(
            lambda: mean_all(mul(reshape(x, (1, 3, 2, 2)), c)), [x], rng64)
        assert err < 1e-3
