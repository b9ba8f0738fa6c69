#!/usr/bin/env python3
"""
Tests for the autodiff tensor core, Adam and the gradient checker.
"""

import os
import sys

import numpy as np
import pytest

# Add the src directory to the path
sys.path.append(os.path.join(os.path.dirname(__file__), 'src'))

from ai_engine import tensor as T  # noqa: E402
from ai_engine.gradcheck import gradient_check  # noqa: E402
from ai_engine.optimizer import AdamState, adam_step  # noqa: E402
from ai_engine.tensor import Tape, Tensor, backward  # noqa: E402
from models.errors import ContractError, DimensionError  # noqa: E402

PRIMITIVE_TOL = 1e-6
# Gradients below this magnitude are compared absolutely.
GRAD_FLOOR = 1e-2


def _param(rng, *shape, offset=0.0):
    return Tensor(rng.standard_normal(shape) + offset, requires_grad=True)


def _weighted(out, w):
    """Scalar projection sum(out * w) giving O(1) gradients everywhere."""
    return T.tensor_sum(T.mul(out, w))


class TestMatmul:

    def test_identity(self):
        x = np.arange(9.0).reshape(3, 3)
        np.testing.assert_array_equal(T.matmul(np.eye(3), x).data, x)
        np.testing.assert_array_equal(
            T.matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0, 0.0], [0.0, 1.0]]).data,
            [[1.0, 2.0], [3.0, 4.0]],
        )

    def test_gradient_of_sum_is_ones_times_b_transpose(self):
        rng = np.random.default_rng(0)
        a, b = _param(rng, 3, 4), _param(rng, 4, 5)
        with Tape() as tape:
            loss = T.tensor_sum(T.matmul(a, b))
        backward(loss, tape)
        np.testing.assert_allclose(a.grad, np.ones((3, 5)) @ b.data.T, atol=1e-12)
        np.testing.assert_allclose(b.grad, a.data.T @ np.ones((3, 5)), atol=1e-12)

        result = gradient_check(lambda: T.tensor_sum(T.matmul(a, b)), {"a": a, "b": b}, floor=GRAD_FLOOR)
        assert result.passed(PRIMITIVE_TOL)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.matmul(np.ones((2, 3)), np.ones((2, 3)))
        with pytest.raises(DimensionError):
            T.matmul(np.ones(3), np.ones((3, 3)))

    def test_batched_gradient(self):
        rng = np.random.default_rng(1)
        a, b = _param(rng, 2, 3, 4), _param(rng, 4, 2)
        w = rng.standard_normal((2, 3, 2))
        result = gradient_check(lambda: _weighted(T.matmul(a, b), w), {"a": a, "b": b}, floor=GRAD_FLOOR)
        assert result.passed(PRIMITIVE_TOL)


class TestSoftmax:

    def test_uniform_row(self):
        np.testing.assert_allclose(T.softmax_rows(np.zeros((1, 4))).data, [[0.25] * 4], atol=1e-15)

    def test_large_logits_do_not_overflow(self):
        out = T.softmax_rows([[1000.0, 0.0]]).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [[1.0, 0.0]], atol=1e-300)

    def test_rows_sum_to_one_and_permute(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((50, 7)) * 10
        out = T.softmax_rows(x).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
        perm = rng.permutation(7)
        np.testing.assert_allclose(T.softmax_rows(x[:, perm]).data, out[:, perm], atol=1e-15)

    def test_jacobian(self):
        rng = np.random.default_rng(3)
        x = _param(rng, 3, 5)
        w = rng.standard_normal((3, 5))
        assert gradient_check(lambda: _weighted(T.softmax_rows(x), w), {"x": x}, floor=GRAD_FLOOR).passed(PRIMITIVE_TOL)


class TestRmsNorm:

    def test_ones_stay_ones(self):
        out = T.rms_norm(np.ones((2, 8)), np.ones(8)).data
        np.testing.assert_allclose(out, 1.0, atol=1e-6)

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((4, 16)) * 100
        gain = rng.standard_normal(16)
        for c in (0.5, 3.0, 1000.0):
            np.testing.assert_allclose(T.rms_norm(c * x, gain).data, T.rms_norm(x, gain).data, atol=1e-9)

    def test_gradient(self):
        rng = np.random.default_rng(5)
        x, gain = _param(rng, 3, 6), _param(rng, 6)
        w = rng.standard_normal((3, 6))
        result = gradient_check(lambda: _weighted(T.rms_norm(x, gain), w), {"x": x, "gain": gain}, floor=GRAD_FLOOR)
        assert result.passed(PRIMITIVE_TOL)

    def test_gain_shape_checked(self):
        with pytest.raises(DimensionError):
            T.rms_norm(np.ones((2, 4)), np.ones(3))


class TestSwiglu:

    def test_zero_input_gives_zero(self):
        rng = np.random.default_rng(6)
        out = T.swiglu(np.zeros((3, 4)), rng.standard_normal((4, 6)), rng.standard_normal((4, 6)), rng.standard_normal((6, 4)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_closed_gate_gives_zero(self):
        rng = np.random.default_rng(7)
        out = T.swiglu(rng.standard_normal((3, 4)), np.zeros((4, 6)), rng.standard_normal((4, 6)), rng.standard_normal((6, 4)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_gradient(self):
        rng = np.random.default_rng(8)
        tensors = {
            "x": _param(rng, 3, 4), "gate": _param(rng, 4, 6),
            "up": _param(rng, 4, 6), "down": _param(rng, 6, 4),
        }
        w = rng.standard_normal((3, 4))
        result = gradient_check(
            lambda: _weighted(T.swiglu(tensors["x"], tensors["gate"], tensors["up"], tensors["down"]), w),
            tensors, floor=GRAD_FLOOR,
        )
        assert result.passed(PRIMITIVE_TOL)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            T.swiglu(np.ones((2, 4)), np.ones((4, 6)), np.ones((4, 5)), np.ones((6, 4)))
        with pytest.raises(DimensionError):
            T.swiglu(np.ones((2, 4)), np.ones((4, 6)), np.ones((4, 6)), np.ones((6, 3)))


class TestOtherPrimitives:
    """Central-difference checks for every remaining differentiable primitive."""

    CASES = {
        "add_broadcast": (lambda a, b: T.add(a, b), [(3, 4), (4,)]),
        "sub": (lambda a, b: T.sub(a, b), [(3, 4), (3, 4)]),
        "mul": (lambda a, b: T.mul(a, b), [(3, 4), (1, 4)]),
        "div": (lambda a, b: T.div(a, b), [(3, 4), (3, 4)]),
        "power": (lambda a: T.power(a, 3.0), [(3, 4)]),
        "exp": (lambda a: T.exp(a), [(3, 4)]),
        "sigmoid": (lambda a: T.sigmoid(a), [(3, 4)]),
        "swish": (lambda a: T.swish(a), [(3, 4)]),
        "relu": (lambda a: T.relu(a), [(3, 4)]),
        "gelu": (lambda a: T.gelu(a), [(3, 4)]),
        "mean_axis": (lambda a: T.tensor_mean(a, axis=1), [(3, 4)]),
        "sum_tuple_axis": (lambda a: T.tensor_sum(a, axis=(0, 2)), [(2, 3, 4)]),
        "reshape_transpose": (lambda a: T.transpose(T.reshape(a, (4, 3)), (1, 0)), [(3, 4)]),
        "concat": (lambda a, b: T.concat([a, b], axis=1), [(3, 2), (3, 4)]),
        "layer_norm": (lambda a, g, b: T.layer_norm(a, g, b), [(3, 6), (6,), (6,)]),
        "rotate_pairs": (lambda a: T.rotate_pairs(a, np.linspace(0.1, 2.0, 6).reshape(3, 2)), [(2, 3, 4)]),
        "conv2d": (lambda x, w, b: T.conv2d(x, w, b, stride=2, padding=1), [(2, 3, 6, 6), (4, 3, 3, 3), (4,)]),
    }

    @pytest.mark.parametrize("name", sorted(CASES))
    def test_gradient(self, name):
        fn, shapes = self.CASES[name]
        rng = np.random.default_rng(sorted(self.CASES).index(name))
        inputs = [_param(rng, *shape, offset=3.0 if name in ("div", "log") else 0.0) for shape in shapes]
        w = rng.standard_normal(fn(*inputs).shape)
        result = gradient_check(
            lambda: _weighted(fn(*inputs), w),
            {f"in{i}": t for i, t in enumerate(inputs)},
            floor=GRAD_FLOOR,
        )
        assert result.passed(PRIMITIVE_TOL), f"{name}: {result}"

    def test_log(self):
        rng = np.random.default_rng(9)
        x = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        w = rng.standard_normal((3, 4))
        assert gradient_check(lambda: _weighted(T.log(x), w), {"x": x}, floor=GRAD_FLOOR).passed(PRIMITIVE_TOL)

    def test_embedding_lookup_accumulates_repeated_rows(self):
        table = Tensor(np.arange(12.0).reshape(4, 3), requires_grad=True)
        ids = np.array([[0, 2], [2, 2]])
        with Tape() as tape:
            loss = T.tensor_sum(T.take_rows(table, ids))
        backward(loss, tape)
        np.testing.assert_array_equal(table.grad[:, 0], [1.0, 0.0, 3.0, 0.0])

    def test_pick(self):
        rng = np.random.default_rng(10)
        a = _param(rng, 4, 5)
        labels = np.array([0, 4, 2, 2])
        np.testing.assert_array_equal(T.pick(a, labels).data, a.data[np.arange(4), labels])
        assert gradient_check(lambda: T.tensor_sum(T.pick(a, labels)), {"a": a}, floor=GRAD_FLOOR).passed(PRIMITIVE_TOL)

    def test_dropout_is_identity_outside_training(self):
        x = Tensor(np.ones((4, 4)))
        assert T.dropout(x, 0.5, np.random.default_rng(0), training=False) is x

    def test_dropout_mask_is_seeded(self):
        x = Tensor(np.ones((8, 8)))
        a = T.dropout(x, 0.5, np.random.default_rng(3), training=True).data
        b = T.dropout(x, 0.5, np.random.default_rng(3), training=True).data
        np.testing.assert_array_equal(a, b)
        assert set(np.unique(a)) <= {0.0, 2.0}


class TestBackward:

    def test_sum_gives_ones(self):
        x = Tensor(np.arange(5.0), requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(x)
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, np.ones(5))

    def test_square_gives_two_x(self):
        x = Tensor(np.array([1.0, -2.0, 3.5]), requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(T.mul(x, x))
        backward(loss, tape)
        np.testing.assert_array_equal(x.grad, 2 * x.data)

    def test_fan_out_accumulates(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(T.add(T.mul(x, 3.0), T.exp(x)))
        backward(loss, tape)
        np.testing.assert_allclose(x.grad, 3.0 + np.exp(x.data), atol=1e-12)

    def test_unreached_leaf_gets_zero_grad(self):
        x = Tensor(np.ones(3), requires_grad=True)
        y = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            T.mul(y, 2.0)
            loss = T.tensor_sum(x)
        backward(loss, tape)
        np.testing.assert_array_equal(y.grad, np.zeros(3))

    def test_non_scalar_loss(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            out = T.mul(x, 2.0)
        with pytest.raises(ContractError):
            backward(out, tape)

    def test_loss_must_be_on_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape():
            loss = T.tensor_sum(x)
        with pytest.raises(ContractError):
            backward(loss, Tape())

    def test_no_recording_outside_a_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        out = T.tensor_sum(x)
        assert out.tape_id is None and not out.requires_grad

    def test_repeated_runs_are_bit_identical(self):
        def run():
            rng = np.random.default_rng(11)
            a, b = _param(rng, 4, 4), _param(rng, 4, 4)
            with Tape() as tape:
                loss = T.tensor_sum(T.softmax_rows(T.matmul(a, b)))
            backward(loss, tape)
            return a.grad.tobytes() + b.grad.tobytes()
        assert run() == run()


class TestAdam:

    def test_single_step_oracle(self):
        p = Tensor(np.array(1.0), requires_grad=True)
        p.grad = np.array(1.0)
        state = AdamState(learning_rate=0.1)
        adam_step([p], state)
        np.testing.assert_allclose(p.data, 0.9000000316, atol=1e-10)
        assert state.step == 1
        np.testing.assert_array_equal(p.grad, 0.0)

    def test_zero_grads_leave_params(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        adam_step({"p": p}, AdamState(learning_rate=0.1))
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_zero_learning_rate_leaves_params(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.array([0.3, -5.0])
        adam_step({"p": p}, AdamState(learning_rate=0.0))
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_moments_match_parameter_shapes(self):
        p = Tensor(np.ones((2, 3)), requires_grad=True)
        p.grad = np.ones((2, 3))
        state = AdamState()
        adam_step({"w": p}, state)
        assert state.m["w"].shape == (2, 3) and state.v["w"].shape == (2, 3)

    def test_missing_grad(self):
        with pytest.raises(ContractError):
            adam_step([Tensor(np.ones(2), requires_grad=True)], AdamState())
