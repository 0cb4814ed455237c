"""
Unit Tests for the Tensor Autodiff Core

Tests forward values, backward rules, gradient accumulation, masking and
the finite-difference checker.
"""

import numpy as np
import pytest

from app.core import tensor as T
from app.core.gradcheck import grad_check, grad_check_many, max_abs_gradient, relative_error
from app.core.tensor import Tensor, backward, no_grad
from app.exceptions import MaskingError, ShapeError


def leaf(values) -> Tensor:
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)


class TestBackward:
    """Test reverse-mode differentiation"""

    def test_sum_gradient_is_ones(self):
        """Test that d sum(x) / dx is all ones"""
        x = leaf([1.0, 2.0])
        backward(T.reduce_sum(x))

        np.testing.assert_array_equal(x.grad, [1.0, 1.0])

    def test_square_gradient(self):
        """Test that d sum(x*x) / dx = 2x"""
        x = leaf([3.0])
        backward(T.reduce_sum(x * x))

        np.testing.assert_array_equal(x.grad, [6.0])

    def test_gradients_accumulate_across_passes(self):
        """Test that two backward passes without zeroing double the gradient"""
        rng = np.random.default_rng(0)
        x = leaf(rng.normal(size=(3, 2)))
        w = rng.normal(size=(2, 2))

        backward(T.reduce_sum(T.tanh(T.matmul(x, w))))
        single = x.grad.copy()
        backward(T.reduce_sum(T.tanh(T.matmul(x, w))))

        np.testing.assert_allclose(x.grad, 2.0 * single, rtol=0, atol=1e-15)

    def test_retained_graph_can_be_replayed(self):
        """Test that retain_graph keeps the graph for a second pass"""
        x = leaf([1.0, -2.0])
        loss = T.reduce_sum(x * x)
        backward(loss, retain_graph=True)
        backward(loss)

        np.testing.assert_array_equal(x.grad, [4.0, -8.0])

    def test_non_scalar_loss_raises(self):
        """Test that backward refuses a non-scalar loss"""
        x = leaf([1.0, 2.0])

        with pytest.raises(ShapeError):
            backward(x * 2.0)

    def test_no_grad_records_nothing(self):
        """Test that operations under no_grad build no graph"""
        x = leaf([1.0, 2.0])
        with no_grad():
            y = T.reduce_sum(x * x)

        assert y.node is None
        assert not y.requires_grad
        assert T.is_grad_enabled()

    def test_diamond_graph_sums_both_paths(self):
        """Test that a tensor used twice receives both contributions"""
        x = leaf([2.0])
        y = T.tanh(x)
        backward(T.reduce_sum(y * y + y))

        t = np.tanh(2.0)
        np.testing.assert_allclose(x.grad, [(2 * t + 1) * (1 - t * t)], rtol=1e-14)

    def test_zero_grads_clears(self):
        """Test that zero_grads resets every gradient"""
        x = leaf([1.0])
        backward(T.reduce_sum(x * 3.0))
        T.zero_grads([x])

        assert x.grad is None


class TestMatmul:
    """Test matrix multiplication"""

    def test_matches_numpy_with_batch_axes(self):
        """Test that batched matmul equals numpy"""
        rng = np.random.default_rng(1)
        a = rng.normal(size=(2, 3, 4))
        b = rng.normal(size=(4, 5))

        np.testing.assert_array_equal(T.matmul(a, b).data, a @ b)

    def test_mismatch_names_both_shapes(self):
        """Test that incompatible inner extents raise with both shapes"""
        with pytest.raises(ShapeError) as exc_info:
            T.matmul(np.ones((2, 3)), np.ones((4, 2)))

        assert "(2, 3)" in str(exc_info.value)
        assert "(4, 2)" in str(exc_info.value)

    def test_gradients_of_product(self):
        """Test that grad A = G B^T and grad B = A^T G for sum(A @ B)"""
        rng = np.random.default_rng(2)
        a = leaf(rng.normal(size=(2, 3)))
        b = leaf(rng.normal(size=(3, 4)))
        backward(T.reduce_sum(T.matmul(a, b)))

        np.testing.assert_allclose(a.grad, np.ones((2, 4)) @ b.data.T, rtol=1e-14)
        np.testing.assert_allclose(b.grad, a.data.T @ np.ones((2, 4)), rtol=1e-14)


class TestBroadcasting:
    """Test elementwise broadcasting and its gradients"""

    def test_bias_gradient_sums_over_rows(self):
        """Test that a broadcast bias receives the row sum"""
        x = leaf(np.ones((4, 3)))
        bias = leaf(np.zeros(3))
        backward(T.reduce_sum(x + bias))

        np.testing.assert_array_equal(bias.grad, [4.0, 4.0, 4.0])

    def test_incompatible_shapes_raise(self):
        """Test that non-broadcastable operands raise ShapeError"""
        with pytest.raises(ShapeError):
            T.add(np.ones((2, 3)), np.ones((3, 2)))

    def test_elementwise_dispatch(self):
        """Test add / sub / mul by name"""
        a, b = np.array([1.0, 2.0]), np.array([3.0, 5.0])

        np.testing.assert_array_equal(T.elementwise("add", a, b).data, [4.0, 7.0])
        np.testing.assert_array_equal(T.elementwise("sub", a, b).data, [-2.0, -3.0])
        np.testing.assert_array_equal(T.elementwise("mul", a, b).data, [3.0, 10.0])
        with pytest.raises(ValueError):
            T.elementwise("div", a, b)

    def test_elementwise_broadcasts_b_over_trailing_axes(self):
        """Test that a row vector b is added to every row of a"""
        out = T.elementwise("add", np.zeros((3, 2)), np.array([1.0, 2.0]))

        np.testing.assert_array_equal(out.data, [[1.0, 2.0]] * 3)

    def test_elementwise_rejects_stretching_a(self):
        """Test that a result shape different from a's shape raises ShapeError"""
        with pytest.raises(ShapeError):
            T.elementwise("add", np.array([1.0, 2.0]), np.zeros((3, 2)))
        with pytest.raises(ShapeError):
            T.elementwise("mul", np.ones((3, 1)), np.ones((1, 4)))


class TestClampMin:
    """Test clamp_min"""

    def test_clamps_and_routes_gradient(self):
        """Test values below c are raised to c and get no gradient"""
        x = leaf([0.5, 2.0])
        out = T.clamp_min(x, 1.0)
        backward(T.reduce_sum(out))

        np.testing.assert_array_equal(out.data, [1.0, 2.0])
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_nan_propagates(self):
        """Test that NaN is not replaced by the floor"""
        out = T.clamp_min(np.array([np.nan, 1e-20]), 1e-12)

        assert np.isnan(out.data[0])
        assert out.data[1] == 1e-12


class TestMaskedSoftmax:
    """Test masked softmax"""

    def test_masked_entries_are_exactly_zero(self):
        """Test that masked entries get weight 0 and the rest renormalize"""
        out = T.masked_softmax(np.array([1.0, 2.0, 3.0]), np.array([True, True, False]))

        expected = np.exp([1.0, 2.0]) / np.exp([1.0, 2.0]).sum()
        np.testing.assert_allclose(out.data[:2], expected, rtol=1e-14)
        assert out.data[2] == 0.0

    def test_rows_are_distributions(self):
        """Test nonnegativity and unit row sums on random masked input"""
        rng = np.random.default_rng(3)
        for _ in range(50):
            scores = rng.normal(scale=5.0, size=(4, 7))
            mask = rng.random((4, 7)) < 0.6
            mask[:, 0] = True
            out = T.masked_softmax(scores, mask).data

            assert out.min() >= 0.0
            assert np.all(out[~mask] == 0.0)
            np.testing.assert_allclose(out.sum(axis=-1), 1.0, rtol=0, atol=1e-12)

    def test_fully_masked_row_raises(self):
        """Test that a row with no unmasked entry raises MaskingError"""
        with pytest.raises(MaskingError):
            T.masked_softmax(np.zeros((2, 3)), np.array([[True, False, False], [False, False, False]]))

    def test_large_scores_stay_finite(self):
        """Test the max-shift keeps huge logits finite"""
        out = T.softmax(np.array([1000.0, 1001.0]))

        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data.sum(), 1.0, atol=1e-12)


class TestStructuralOps:
    """Test reshape, transpose, concat, slicing and row gathers"""

    def test_transpose_defaults_to_last_two_axes(self):
        """Test the default transpose"""
        x = np.arange(24.0).reshape(2, 3, 4)

        assert T.transpose(x).shape == (2, 4, 3)

    def test_concat_routes_gradients(self):
        """Test that concat splits the upstream gradient back"""
        a = leaf(np.ones((2, 1)))
        b = leaf(np.ones((2, 2)))
        weights = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
        backward(T.reduce_sum(T.concat([a, b], axis=-1) * weights))

        np.testing.assert_array_equal(a.grad, [[1.0], [4.0]])
        np.testing.assert_array_equal(b.grad, [[2.0, 3.0], [5.0, 6.0]])

    def test_bad_reshape_raises(self):
        """Test that an impossible reshape raises ShapeError"""
        with pytest.raises(ShapeError):
            T.reshape(np.ones(6), (4, 2))

    def test_take_rows_scatter_adds(self):
        """Test that repeated ids accumulate gradient rows"""
        table = leaf(np.zeros((4, 2)))
        backward(T.reduce_sum(T.take_rows(table, np.array([[1, 1], [3, 0]]))))

        np.testing.assert_array_equal(table.grad, [[1, 1], [2, 2], [0, 0], [1, 1]])

    def test_take_rows_out_of_range(self):
        """Test that ids outside the table raise"""
        with pytest.raises(ShapeError):
            T.take_rows(np.zeros((3, 2)), np.array([3]))

    def test_slice_axis(self):
        """Test slicing along an axis"""
        out = T.slice_axis(np.arange(10.0).reshape(2, 5), 1, 3, axis=1)

        np.testing.assert_array_equal(out.data, [[1.0, 2.0], [6.0, 7.0]])

    def test_dispatcher(self):
        """Test the structural dispatcher"""
        out = T.reshape_concat_slice_transpose("reshape", np.arange(6.0), (2, 3))

        assert out.shape == (2, 3)
        with pytest.raises(ValueError):
            T.reshape_concat_slice_transpose("flip", np.arange(6.0))


class TestGradCheck:
    """Test finite-difference verification"""

    @pytest.mark.parametrize("op", ["tanh", "exp", "sigmoid", "neg"])
    def test_unary_ops(self, op):
        """Test unary ops on 10 random inputs"""
        rng = np.random.default_rng(4)
        for _ in range(10):
            x = leaf(rng.normal(size=(3, 2)))
            error = grad_check(lambda t: T.reduce_sum(T.unary(op, t)), x, eps=1e-4)

            assert error <= 1e-6

    def test_log_and_power(self):
        """Test log and power on positive inputs"""
        rng = np.random.default_rng(5)
        for _ in range(10):
            x = leaf(rng.uniform(0.5, 2.0, size=4))

            assert grad_check(lambda t: T.reduce_sum(T.log(t)), x) <= 1e-6
            assert grad_check(lambda t: T.reduce_sum(T.power(t, 3.0)), x) <= 1e-6

    def test_relu_away_from_kink(self):
        """Test relu where inputs are away from zero"""
        rng = np.random.default_rng(6)
        values = rng.uniform(0.1, 1.0, size=6) * rng.choice([-1.0, 1.0], size=6)

        assert grad_check(lambda t: T.reduce_sum(T.relu(t) * 2.0), leaf(values)) <= 1e-6

    def test_binary_ops(self):
        """Test matmul, mul and sub (exactly linear in each operand)"""
        rng = np.random.default_rng(7)
        for _ in range(10):
            a = leaf(rng.normal(size=(2, 3)))
            b = leaf(rng.normal(size=(3, 2)))
            c = leaf(rng.normal(size=(2, 2)))

            def f() -> Tensor:
                return T.reduce_sum(T.matmul(a, b) * c - c)

            assert grad_check_many(f, [a, b, c]) <= 1e-6

    def test_softmax_single_output(self):
        """Test softmax through one selected probability"""
        rng = np.random.default_rng(8)
        for _ in range(10):
            x = leaf(rng.normal(size=4))

            assert grad_check(lambda t: T.reduce_sum(T.getitem(T.softmax(t), (slice(0, 1),))), x) <= 1e-6

    def test_sum_is_exact(self):
        """Test that f = sum is checked to round-off"""
        x = leaf(np.random.default_rng(9).normal(size=5))

        assert grad_check(lambda t: T.reduce_sum(t), x) <= 1e-10

    def test_tanh_matmul_chain(self):
        """Test sum(tanh(W x)) for random W and x"""
        rng = np.random.default_rng(10)
        w = leaf(rng.normal(size=(3, 4)))
        x = leaf(rng.normal(size=(4, 1)))

        assert grad_check_many(lambda: T.reduce_sum(T.tanh(T.matmul(w, x))), [w, x], eps=1e-4) <= 1e-6

    def test_corrupted_rule_is_caught(self):
        """Test that a wrong backward rule produces a large error"""

        def bad_square(t: Tensor) -> Tensor:
            return T.apply_op("bad_square", t.data * t.data, (t,), lambda g: (g * t.data,))

        x = leaf([1.0, 2.0, -1.5])

        assert grad_check(lambda t: T.reduce_sum(bad_square(t)), x) > 1e-2

    def test_relative_error_floor(self):
        """Test the 1e-8 floor in the relative error"""
        assert relative_error(0.0, 0.0) == 0.0
        assert relative_error(1e-12, 0.0) == pytest.approx(1e-4)

    def test_absolute_guard(self):
        """Test that round-off differences below atol count as exact"""
        assert relative_error(1e-12, -2e-12, atol=1e-8) == 0.0
        assert relative_error(1e-12, -2e-12) == pytest.approx(3e-4)
        assert relative_error(1.0, 1.1, atol=1e-8) == pytest.approx(0.1 / 1.1)

    def test_shift_invariant_parameter(self):
        """Test a bias that softmax cancels: zero gradient, and the check still passes"""
        rng = np.random.default_rng(11)
        x = leaf(rng.normal(size=(3, 5)))
        shift = leaf([0.7])
        weights = rng.normal(size=(3, 5))

        def f() -> Tensor:
            return T.reduce_sum(T.softmax(x + shift) * weights)

        assert max_abs_gradient(f, shift) <= 1e-12
        assert grad_check_many(f, [x, shift]) <= 1e-6
        assert shift.grad is None

    def test_check_restores_state(self):
        """Test that the checker leaves values and flags untouched"""
        values = np.array([0.3, -0.7])
        x = Tensor(values.copy())
        grad_check(lambda t: T.reduce_sum(T.tanh(t)), x)

        np.testing.assert_array_equal(x.data, values)
        assert not x.requires_grad
        assert x.grad is None


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
