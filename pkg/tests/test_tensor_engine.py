import unittest

import numpy as np

from mmdforge.errors import ContractError, DimensionError, NumericError
from mmdforge.tensor_engine import (
    OptimState,
    Tape,
    Tensor,
    add,
    backward,
    clip_params,
    concat_rows,
    elu,
    exp,
    matmul,
    mean,
    mul,
    no_grad,
    pad_rows,
    pairwise_sqdist,
    power,
    relu,
    rmsprop_step,
    square,
    sum,
    take_rows,
    tanh,
)
from tests.utils import finite_difference, relative_error

try:
    import torch
except ImportError:
    torch = None


class TestTape(unittest.TestCase):

    def test_square_gradient(self):
        p = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = sum(mul(p, p))
        grad, = tape.gradient(loss, [p])
        np.testing.assert_array_equal(grad.data, [2.0, -4.0, 6.0])

    def test_backward_returns_dict(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        x = Tensor([[1.0, 2.0]])
        with Tape():
            loss = sum(matmul(x, w))
        grads = backward(loss)
        np.testing.assert_array_equal(grads[w].data, [[1.0, 1.0], [2.0, 2.0]])

    def test_unused_parameter_gets_zero(self):
        a = Tensor([1.0], requires_grad=True)
        b = Tensor([5.0, 6.0], requires_grad=True)
        with Tape() as tape:
            loss = sum(square(a))
        grad_a, grad_b = tape.gradient(loss, [a, b])
        np.testing.assert_array_equal(grad_b.data, [0.0, 0.0])
        self.assertEqual(grad_a.data[0], 2.0)

    def test_non_scalar_loss(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            out = mul(p, 2.0)
        with self.assertRaises(ContractError):
            tape.gradient(out, [p])

    def test_consumed_tape(self):
        p = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            loss = sum(square(p))
        tape.gradient(loss, [p])
        self.assertTrue(tape.consumed)
        with self.assertRaises(ContractError):
            tape.gradient(loss, [p])

    def test_loss_from_other_tape(self):
        p = Tensor([1.0], requires_grad=True)
        with Tape():
            loss = sum(square(p))
        with Tape() as other:
            with self.assertRaises(ContractError):
                other.gradient(loss, [p])

    def test_no_grad(self):
        p = Tensor([1.0], requires_grad=True)
        with Tape() as tape:
            with no_grad():
                out = sum(square(p))
            self.assertFalse(out.is_tracked(tape))
            self.assertEqual(len(tape), 0)

    def test_numeric_error_names_primitive(self):
        with self.assertRaises(NumericError) as context:
            power(Tensor([-1.0]), 0.5)
        self.assertEqual(context.exception.primitive, "power")
        with self.assertRaises(NumericError):
            exp(Tensor([1000.0]))

    def test_dimension_errors(self):
        with self.assertRaises(DimensionError):
            add(Tensor(np.ones((2, 3))), Tensor(np.ones(4)))
        with self.assertRaises(DimensionError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_bias_broadcast_gradient(self):
        x = Tensor(np.arange(6.0).reshape(3, 2))
        b = Tensor([0.5, -0.5], requires_grad=True)
        with Tape() as tape:
            loss = sum(square(add(x, b)))
        grad, = tape.gradient(loss, [b])
        expected = 2.0 * (x.data + b.data).sum(axis=0)
        np.testing.assert_allclose(grad.data, expected, rtol=1e-14)

    def test_double_backward(self):
        x = Tensor([0.5, -1.5, 2.0], requires_grad=True)
        with Tape() as tape:
            y = sum(power(x, 3.0))
            grad, = tape.gradient(y, [x], create_graph=True)
            second, = tape.gradient(sum(grad), [x])
        np.testing.assert_allclose(grad.data, 3.0 * x.data ** 2, rtol=1e-14)
        np.testing.assert_allclose(second.data, 6.0 * x.data, rtol=1e-14)

    def test_operator_overloads(self):
        a = Tensor([[1.0, 2.0]], requires_grad=True)
        with Tape() as tape:
            loss = ((a * 3.0 - 1.0) ** 2).sum() / 2.0
        grad, = tape.gradient(loss, [a])
        np.testing.assert_allclose(grad.data, 3.0 * (3.0 * a.data - 1.0))


class TestPrimitives(unittest.TestCase):

    def _check(self, build, shape, seed=0):
        rng = np.random.default_rng(seed)
        values = rng.standard_normal(shape)
        param = Tensor(values, requires_grad=True)
        with Tape() as tape:
            loss = build(param)
        grad, = tape.gradient(loss, [param])

        def value():
            with no_grad():
                return build(Tensor(values)).item()
        numeric = finite_difference(value, values)
        self.assertLess(relative_error(grad.data, numeric), 1e-6)

    def test_elementwise_gradients(self):
        self._check(lambda p: sum(tanh(p)), (3, 2))
        self._check(lambda p: sum(mul(exp(p), p)), (4,))
        self._check(lambda p: mean(square(elu(p))), (5,))
        self._check(lambda p: sum(relu(p)), (6,), seed=3)
        self._check(lambda p: sum(power(add(square(p), 1.0), 0.5)), (3,))

    def test_matmul_gradient(self):
        other = np.random.default_rng(1).standard_normal((3, 4))
        self._check(lambda p: sum(tanh(matmul(p, Tensor(other)))), (2, 3))

    def test_pairwise_sqdist_gradient(self):
        y = np.random.default_rng(2).standard_normal((4, 3))
        self._check(
            lambda p: sum(exp(mul(pairwise_sqdist(p, Tensor(y)), -0.5))), (5, 3)
        )

    def test_row_stacking_gradients(self):
        other = np.random.default_rng(4).standard_normal((2, 3))
        weights = np.random.default_rng(5).standard_normal((6, 3))
        self._check(
            lambda p: sum(mul(tanh(concat_rows(p, Tensor(other))), Tensor(weights))),
            (4, 3),
        )
        self._check(
            lambda p: sum(mul(tanh(concat_rows(Tensor(other), p)), Tensor(weights))),
            (4, 3),
        )
        self._check(lambda p: sum(square(take_rows(p, 1, 3))), (5, 2))
        self._check(lambda p: sum(tanh(pad_rows(p, 2, 6))), (3, 2))

    def test_row_stacking_shapes(self):
        a, b = np.ones((2, 3)), np.zeros((4, 3))
        stacked = concat_rows(a, b).data
        np.testing.assert_array_equal(stacked, np.vstack([a, b]))
        np.testing.assert_array_equal(take_rows(stacked, 2, 6).data, b)
        with self.assertRaises(DimensionError):
            concat_rows(a, np.ones((2, 4)))
        with self.assertRaises(DimensionError):
            take_rows(a, 1, 5)
        with self.assertRaises(DimensionError):
            pad_rows(a, 3, 4)

    def test_pairwise_sqdist_exact(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((6, 3))
        y = rng.standard_normal((4, 3))
        forward = pairwise_sqdist(x, y).data
        reverse = pairwise_sqdist(y, x).data
        np.testing.assert_array_equal(forward, reverse.T)
        self.assertTrue(np.all(np.diag(pairwise_sqdist(x, x).data) == 0.0))
        loop = np.array([[np.sum((a - b) ** 2) for b in y] for a in x])
        np.testing.assert_allclose(forward, loop, atol=1e-12)

    @unittest.skipIf(torch is None, "torch not installed")
    def test_against_torch_autograd(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((5, 3))
        w = rng.standard_normal((3, 4))
        b = rng.standard_normal(4)

        wt = Tensor(w, requires_grad=True)
        bt = Tensor(b, requires_grad=True)
        with Tape() as tape:
            h = tanh(add(matmul(Tensor(x), wt), bt))
            loss = sum(exp(mul(pairwise_sqdist(h, h), -0.5)))
        grad_w, grad_b = tape.gradient(loss, [wt, bt])

        tw = torch.tensor(w, requires_grad=True, dtype=torch.float64)
        tb = torch.tensor(b, requires_grad=True, dtype=torch.float64)
        th = torch.tanh(torch.tensor(x, dtype=torch.float64) @ tw + tb)
        sq = (th ** 2).sum(1, keepdim=True) + (th ** 2).sum(1) - 2 * th @ th.T
        torch.exp(-0.5 * sq.clamp(min=0)).sum().backward()
        self.assertLess(relative_error(grad_w.data, tw.grad.numpy()), 1e-8)
        self.assertLess(relative_error(grad_b.data, tb.grad.numpy()), 1e-8)


class TestOptim(unittest.TestCase):

    def test_rmsprop_first_step(self):
        p = Tensor([1.0, -1.0])
        g = np.array([0.2, -0.4])
        state = OptimState(learning_rate=0.1, decay=0.9, eps=1e-8)
        rmsprop_step([p], [g], state, sign=-1)
        acc = 0.1 * g * g
        expected = np.array([1.0, -1.0]) - 0.1 * g / (np.sqrt(acc) + 1e-8)
        np.testing.assert_allclose(p.data, expected, rtol=1e-15)
        np.testing.assert_allclose(state.accumulators[0], acc, rtol=1e-15)

    def test_rmsprop_ascent_and_zero_rate(self):
        p = Tensor([0.0])
        rmsprop_step([p], [np.array([1.0])], OptimState(learning_rate=0.01),
                     sign=1)
        self.assertGreater(p.data[0], 0.0)
        q = Tensor([0.3])
        rmsprop_step([q], [np.array([5.0])], OptimState(learning_rate=0.0))
        self.assertEqual(q.data[0], 0.3)

    def test_rmsprop_validation(self):
        with self.assertRaises(ContractError):
            rmsprop_step([Tensor([0.0])], [np.zeros(1)], OptimState(), sign=2)
        with self.assertRaises(DimensionError):
            rmsprop_step([Tensor([0.0])], [np.zeros(2)], OptimState())
        with self.assertRaises(ContractError):
            OptimState(decay=1.0)

    def test_clip_params(self):
        params = [Tensor([-1.0, 0.005, 2.0]), Tensor([[0.5]])]
        clip_params(params, 0.01)
        np.testing.assert_array_equal(params[0].data, [-0.01, 0.005, 0.01])
        self.assertEqual(params[1].data[0, 0], 0.01)
        with self.assertRaises(ContractError):
            clip_params(params, 0.0)


if __name__ == "__main__":
    unittest.main()
