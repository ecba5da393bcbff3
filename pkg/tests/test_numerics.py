"""Autodiff kernel: analytic gradients, conv/resize/pool against loop oracles, tensor semantics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerialdet import numerics as N
from aerialdet import oracles
from aerialdet.checks import GRAD_TOL, _op_cases
from aerialdet.numerics import ConvSpec, GradCheckError, Tensor, grad_check, no_grad

OP_LABELS = [label for label, _, _ in _op_cases(np.random.default_rng(0))]


class TestGradients:
    @pytest.mark.parametrize("label", OP_LABELS)
    def test_op_gradient(self, label):
        cases = {lbl: (op, inputs) for lbl, op, inputs in _op_cases(np.random.default_rng(7))}
        op, inputs = cases[label]
        assert grad_check(op, inputs) < GRAD_TOL

    def test_wrong_backward_is_detected(self, rng):
        x = Tensor(rng.standard_normal(5), requires_grad=True)

        def bad_square(a):
            # derivative of a**2 is 2a; the missing factor must be caught
            return Tensor._result(a.data ** 2, (a,), lambda g: (g * a.data,), "bad_square")

        assert grad_check(bad_square, [x]) > 1e-2

    def test_non_finite_raises(self):
        x = Tensor(np.array([-1.0, 1.0]), requires_grad=True)
        with np.errstate(invalid="ignore"), pytest.raises(GradCheckError):
            grad_check(N.log, [x])

    def test_inputs_restored(self, rng):
        x = Tensor(rng.standard_normal((2, 3)), requires_grad=False)
        before = x.data.copy()
        grad_check(N.exp, [x])
        assert np.array_equal(x.data, before)
        assert x.requires_grad is False and x.grad is None

    def test_gradient_accumulates_over_reuse(self, rng):
        x = Tensor(rng.standard_normal(4), requires_grad=True)
        (x * x + x).sum().backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)


class TestTensor:
    def test_data_is_read_only(self, rng):
        t = Tensor(rng.standard_normal(3))
        with pytest.raises(ValueError):
            t.data[0] = 1.0

    def test_float64(self):
        assert Tensor(np.arange(3, dtype=np.int32)).data.dtype == np.float64

    def test_numpy_on_left_defers_to_tensor(self, rng):
        t = Tensor(rng.standard_normal(3), requires_grad=True)
        out = np.ones(3) * t
        assert isinstance(out, Tensor)

    def test_no_grad_records_nothing(self, rng):
        x = Tensor(rng.standard_normal(3), requires_grad=True)
        with no_grad():
            y = N.exp(x)
        assert not y.requires_grad

    def test_backward_needs_scalar_or_seed(self, rng):
        x = Tensor(rng.standard_normal(3), requires_grad=True)
        with pytest.raises(ValueError):
            N.exp(x).backward()


class TestAgainstOracles:
    @pytest.mark.parametrize("stride,padding,groups", [(1, 1, 1), (2, 1, 1), (1, 0, 2), (2, 2, 4)])
    def test_conv2d(self, rng, stride, padding, groups):
        x = rng.standard_normal((2, 4, 7, 6))
        w = rng.standard_normal((8, 4 // groups, 3, 3))
        b = rng.standard_normal(8)
        got = N.conv2d(Tensor(x), Tensor(w), Tensor(b), ConvSpec((3, 3), stride, padding, groups)).data
        np.testing.assert_allclose(got, oracles.conv2d(x, w, b, stride, padding, groups), atol=1e-12)

    @given(h=st.integers(1, 6), w=st.integers(1, 6), oh=st.integers(1, 9), ow=st.integers(1, 9))
    @settings(max_examples=40, deadline=None)
    def test_resize_bilinear(self, h, w, oh, ow):
        x = np.random.default_rng(h * 100 + w).standard_normal((1, 2, h, w))
        got = N.resize_bilinear(Tensor(x), oh, ow).data
        np.testing.assert_allclose(got, oracles.resize_bilinear(x, oh, ow), atol=1e-12)

    @given(h=st.integers(1, 6), w=st.integers(1, 6), oh=st.integers(1, 12), ow=st.integers(1, 12))
    @settings(max_examples=40, deadline=None)
    def test_resize_nearest(self, h, w, oh, ow):
        x = np.random.default_rng(h * 100 + w).standard_normal((1, 2, h, w))
        got = N.resize_nearest(Tensor(x), oh, ow).data
        np.testing.assert_array_equal(got, oracles.resize_nearest(x, oh, ow))

    def test_resize_same_size_is_identity(self, rng):
        x = rng.standard_normal((1, 3, 5, 4))
        np.testing.assert_array_equal(N.resize_bilinear(Tensor(x), 5, 4).data, x)

    def test_max_pool(self, rng):
        x = rng.standard_normal((2, 3, 5, 7))
        np.testing.assert_array_equal(N.max_pool2d(Tensor(x), 2, 2).data, oracles.max_pool2d(x, 2, 2))

    def test_softmax_rows_sum_to_one(self, rng):
        p = N.softmax(Tensor(rng.standard_normal((4, 9)) * 50), axis=1).data
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_log_sigmoid_stable(self):
        v = N.log_sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
        assert np.all(np.isfinite(v))
        np.testing.assert_allclose(v, [-800.0, np.log(0.5), 0.0], atol=1e-12)


class TestValidation:
    def test_conv_channel_mismatch(self, rng):
        with pytest.raises(ValueError):
            N.conv2d(Tensor(rng.standard_normal((1, 3, 4, 4))), Tensor(rng.standard_normal((2, 2, 3, 3))))

    def test_conv_needs_rank4(self, rng):
        with pytest.raises(ValueError):
            N.conv2d(Tensor(rng.standard_normal((3, 4, 4))), Tensor(rng.standard_normal((2, 3, 3, 3))))

    def test_resize_to_zero(self, rng):
        with pytest.raises(ValueError):
            N.resize_bilinear(Tensor(rng.standard_normal((1, 1, 3, 3))), 0, 2)

    def test_grad_check_eps(self, rng):
        with pytest.raises(ValueError):
            grad_check(N.exp, [Tensor(rng.standard_normal(2))], eps=0.0)
