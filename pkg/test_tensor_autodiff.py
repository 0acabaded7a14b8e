"""
Tests for the tensor / reverse-mode autodiff layer.

Analytic gradients are compared with central finite differences
(step 1e-4, float64) on 20 random instances per operation.
"""

import sys
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

# Add project root to path
sys.path.insert(0, '.')

from src.autodiff import (
    ComputationTape,
    Tensor,
    backward,
    batch_norm2d,
    conv2d,
    linear,
    matmul,
    max_pool2d,
    mean_over_axes,
    no_grad,
    relu,
    set_precision,
    tensor_sum,
)
from src.autodiff.tensor import broadcast_to, div, power
from src.utils.errors import NumericError, ShapeError, TapeError

FD_STEP = 1e-4
INSTANCES = 20


def numerical_grad(fn, arrays, index, eps=FD_STEP):
    """Central-difference gradient of scalar fn(*Tensors) w.r.t. arrays[index]."""
    base = arrays[index]
    grad = np.zeros_like(base)
    with no_grad():
        for i in np.ndindex(base.shape):
            original = base[i]
            base[i] = original + eps
            plus = fn(*[Tensor(a) for a in arrays]).item()
            base[i] = original - eps
            minus = fn(*[Tensor(a) for a in arrays]).item()
            base[i] = original
            grad[i] = (plus - minus) / (2 * eps)
    return grad


def analytic_grads(fn, arrays):
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    backward(fn(*tensors))
    return [t.grad for t in tensors]


class GradientCase(unittest.TestCase):
    rtol = 1e-5
    atol = 1e-7

    def assertGradientsMatch(self, fn, arrays):
        grads = analytic_grads(fn, arrays)
        for index, grad in enumerate(grads):
            expected = numerical_grad(fn, [a.copy() for a in arrays], index)
            assert_allclose(grad, expected, rtol=self.rtol, atol=self.atol,
                            err_msg=f"gradient of input {index}")


class TestElementwiseGradients(GradientCase):

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_add_sub_mul(self):
        for _ in range(INSTANCES):
            shape = tuple(self.rng.integers(1, 5, size=2))
            a, b = self.rng.normal(size=shape), self.rng.normal(size=shape)
            self.assertGradientsMatch(lambda x, y: tensor_sum((x + y) * (x - y) * x), [a, b])

    def test_division(self):
        for _ in range(INSTANCES):
            a = self.rng.normal(size=(2, 3))
            b = self.rng.uniform(0.5, 2.0, size=(2, 3)) * self.rng.choice([-1.0, 1.0], size=(2, 3))
            self.assertGradientsMatch(lambda x, y: tensor_sum(x / y), [a, b])

    def test_scalar_operand_broadcasts(self):
        for _ in range(INSTANCES):
            a = self.rng.normal(size=(2, 3))
            s = np.array(self.rng.normal())
            self.assertGradientsMatch(lambda x, c: tensor_sum(x * c + c), [a, s])

    def test_power_and_negation(self):
        for _ in range(INSTANCES):
            a = self.rng.uniform(0.5, 2.0, size=(5,))
            exponent = float(self.rng.choice([2.0, 3.0, 0.5, -1.0]))
            self.assertGradientsMatch(lambda x: tensor_sum(-power(x, exponent)), [a])

    def test_matmul(self):
        for _ in range(INSTANCES):
            n, k, m = self.rng.integers(1, 5, size=3)
            a, b = self.rng.normal(size=(n, k)), self.rng.normal(size=(k, m))
            self.assertGradientsMatch(lambda x, y: tensor_sum(matmul(x, y) * matmul(x, y)), [a, b])

    def test_sum_over_axes_and_reshape(self):
        for _ in range(INSTANCES):
            a = self.rng.normal(size=(2, 3, 4))
            weights = self.rng.normal(size=(2, 4))
            self.assertGradientsMatch(
                lambda x: tensor_sum(tensor_sum(x, (1,)) * Tensor(weights)).reshape(1), [a]
            )

    def test_broadcast_to(self):
        for _ in range(INSTANCES):
            a = self.rng.normal(size=(1, 3))
            weights = self.rng.normal(size=(4, 3))
            self.assertGradientsMatch(lambda x: tensor_sum(broadcast_to(x, (4, 3)) * Tensor(weights)), [a])

    def test_reused_input_accumulates(self):
        x = Tensor(np.array([1.5, -2.0]), requires_grad=True)
        backward(tensor_sum(x * x + x))
        assert_allclose(x.grad, 2 * x.data + 1)


class TestNetworkOpGradients(GradientCase):

    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_conv2d_matches_direct_loop(self):
        x = self.rng.normal(size=(2, 3, 5, 5))
        k = self.rng.normal(size=(4, 3, 3, 3))
        bias = self.rng.normal(size=(4,))
        out = conv2d(Tensor(x), Tensor(k), Tensor(bias), stride=2, padding=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        self.assertEqual(out.shape, (2, 4, 3, 3))
        for n in range(2):
            for o in range(4):
                for i in range(3):
                    for j in range(3):
                        window = xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                        self.assertAlmostEqual(out[n, o, i, j], (window * k[o]).sum() + bias[o], places=10)

    def test_conv2d_gradients(self):
        for _ in range(INSTANCES):
            stride, padding = int(self.rng.integers(1, 3)), int(self.rng.integers(0, 2))
            x = self.rng.normal(size=(2, 2, 5, 4))
            k = self.rng.normal(size=(3, 2, 3, 3))
            bias = self.rng.normal(size=(3,))
            with no_grad():
                shape = conv2d(Tensor(x), Tensor(k), Tensor(bias), stride=stride, padding=padding).shape
            weights = self.rng.normal(size=shape)
            self.assertGradientsMatch(
                lambda a, w, c: tensor_sum(conv2d(a, w, c, stride=stride, padding=padding) * Tensor(weights)),
                [x, k, bias],
            )

    def test_relu_gradient_away_from_kink(self):
        for _ in range(INSTANCES):
            x = self.rng.uniform(0.1, 1.0, size=(3, 4)) * self.rng.choice([-1.0, 1.0], size=(3, 4))
            weights = self.rng.normal(size=(3, 4))
            self.assertGradientsMatch(lambda a: tensor_sum(relu(a) * Tensor(weights)), [x])

    def test_max_pool_routes_to_argmax(self):
        for _ in range(INSTANCES):
            # Distinct values 0.1 apart so no step changes the argmax.
            x = 0.1 * self.rng.permutation(32).reshape(2, 2, 4, 4).astype(float)
            weights = self.rng.normal(size=(2, 2, 2, 2))
            self.assertGradientsMatch(lambda a: tensor_sum(max_pool2d(a, 2) * Tensor(weights)), [x])

    def test_max_pool_values(self):
        x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
        assert_array_equal(max_pool2d(Tensor(x), 2).data[0, 0], [[5, 7], [13, 15]])

    def test_mean_over_axes(self):
        for _ in range(INSTANCES):
            x = self.rng.normal(size=(2, 3, 2, 2))
            weights = self.rng.normal(size=(2, 3))
            self.assertGradientsMatch(lambda a: tensor_sum(mean_over_axes(a, (2, 3)) * Tensor(weights)), [x])

    def test_batch_norm_training_gradients(self):
        for _ in range(INSTANCES):
            x = self.rng.normal(size=(4, 3, 2, 2))
            gamma = self.rng.uniform(0.5, 1.5, size=(3,))
            beta = self.rng.normal(size=(3,))
            weights = self.rng.normal(size=(4, 3, 2, 2))

            def fn(a, g, b):
                return tensor_sum(batch_norm2d(a, g, b, np.zeros(3), np.ones(3), training=True) * Tensor(weights))

            self.assertGradientsMatch(fn, [x, gamma, beta])

    def test_batch_norm_running_statistics(self):
        x = self.rng.normal(2.0, 3.0, size=(8, 2, 3, 3))
        running_mean, running_var = np.zeros(2), np.ones(2)
        out = batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), running_mean, running_var, True)
        assert_allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
        assert_allclose(running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
        n = 8 * 9
        assert_allclose(running_var, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * n / (n - 1))

    def test_batch_norm_eval_uses_running_buffers(self):
        x = self.rng.normal(size=(1, 2, 2, 2))
        out = batch_norm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                           np.array([1.0, -1.0]), np.array([4.0, 1.0]), training=False)
        expected = (x - np.array([1.0, -1.0]).reshape(1, 2, 1, 1)) / np.sqrt(
            np.array([4.0, 1.0]).reshape(1, 2, 1, 1) + 1e-5)
        assert_allclose(out.data, expected)

    def test_batch_norm_rejects_single_sample_training(self):
        with self.assertRaises(ShapeError):
            batch_norm2d(Tensor(np.ones((1, 2, 2, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                         np.zeros(2), np.ones(2), training=True)

    def test_linear(self):
        for _ in range(INSTANCES):
            x = self.rng.normal(size=(3, 4))
            w = self.rng.normal(size=(4, 2))
            b = self.rng.normal(size=(2,))
            weights = self.rng.normal(size=(3, 2))
            self.assertGradientsMatch(lambda a, m, c: tensor_sum(linear(a, m, c) * Tensor(weights)), [x, w, b])


class TestTape(unittest.TestCase):

    def test_second_backward_raises(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = tensor_sum(x * x)
        backward(loss)
        with self.assertRaises(TapeError):
            backward(loss)

    def test_retain_graph_accumulates(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        loss = tensor_sum(x * x)
        backward(loss, retain_graph=True)
        backward(loss)
        assert_allclose(x.grad, 4 * x.data)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with self.assertRaises(TapeError):
            backward(x * x)

    def test_untracked_loss_rejected(self):
        with self.assertRaises(TapeError):
            backward(tensor_sum(Tensor(np.ones(3))))

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = tensor_sum(x * x)
        self.assertFalse(y.requires_grad)
        self.assertTrue(y.is_leaf)

    def test_tape_orders_producers_first(self):
        x = Tensor(np.ones(2), requires_grad=True)
        y = x * x
        z = tensor_sum(y + x)
        tape = ComputationTape.from_loss(z)
        ops = [node.op for node in tape.nodes]
        self.assertEqual(ops, ["mul", "add", "sum"])

    def test_zero_grad(self):
        x = Tensor(np.ones(2), requires_grad=True)
        backward(tensor_sum(x * 3.0))
        x.zero_grad()
        assert_array_equal(x.grad, [0.0, 0.0])


class TestErrorsAndPrecision(unittest.TestCase):

    def tearDown(self):
        set_precision("f64")

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((3, 2)))
        with self.assertRaises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_division_by_zero(self):
        with self.assertRaises(NumericError) as ctx:
            div(Tensor(np.ones(2)), Tensor(np.array([1.0, 0.0])))
        self.assertEqual(ctx.exception.op, "div")

    def test_non_finite_result_names_operation(self):
        with np.errstate(all="ignore"):
            with self.assertRaises(NumericError) as ctx:
                power(Tensor(np.array([-1.0])), 0.5)
        self.assertEqual(ctx.exception.op, "pow")

    def test_f32_precision(self):
        set_precision("f32")
        self.assertEqual(Tensor([1.0, 2.0]).data.dtype, np.float32)
        set_precision("f64")
        self.assertEqual(Tensor([1.0, 2.0]).data.dtype, np.float64)

    def test_unknown_precision(self):
        with self.assertRaises(ValueError):
            set_precision("f16")


if __name__ == "__main__":
    unittest.main(verbosity=2)
