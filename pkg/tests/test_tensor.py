import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from greeneyes import tensor as T
from greeneyes.errors import DivisionByZeroError, NonFiniteError, ShapeError, TapeError
from greeneyes.tensor import Tape, Tensor, backward, grad_check, tensor_create

finite = st.floats(-1.0, 1.0, allow_nan=False)


def _sq(t):
    return T.reduce("sum", t * t)


def vec(n, lo=-1.0, hi=1.0, seed=0):
    return np.random.default_rng(seed).uniform(lo, hi, n)


class TestCreate:
    def test_row_major_layout(self):
        t = tensor_create([2, 2], [1, 2, 3, 4])
        assert t.data[1, 0] == 3

    def test_zero_vector(self):
        assert np.array_equal(tensor_create([3], [0, 0, 0]).data, np.zeros(3))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            tensor_create([2], [1, 2, 3])

    def test_non_finite_rejected(self):
        with pytest.raises(NonFiniteError):
            tensor_create([2], [1.0, math.nan])
        with pytest.raises(NonFiniteError):
            Tensor([math.inf])

    def test_immutable(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_registered_on_tape_when_requires_grad(self):
        with Tape() as tape:
            a = tensor_create([1], [2.0], requires_grad=True)
            b = tensor_create([1], [2.0])
        assert a.node_id in tape.leaves
        assert b.node_id not in tape.leaves


class TestUnary:
    def test_values(self):
        assert T.tanh(Tensor(0.0)).item() == 0.0
        assert T.sigmoid(Tensor(0.0)).item() == 0.5
        assert np.array_equal(T.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])
        assert np.array_equal(T.unary_map("neg", Tensor([1.0, -2.0])).data, [-1.0, 2.0])

    def test_exp_tanh_range_dense(self):
        x = np.linspace(-1e6, 1e6, 200001)
        y = T.exp(T.tanh(Tensor(x))).data
        assert y.min() >= math.exp(-1) and y.max() <= math.e

    def test_exp_overflow_errors(self):
        with pytest.raises(NonFiniteError):
            T.exp(Tensor([1000.0]))

    def test_sigmoid_stable_at_extremes(self):
        y = T.sigmoid(Tensor([-800.0, 800.0])).data
        assert y[0] == 0.0 and y[1] == 1.0

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            T.unary_map("cosh", Tensor(1.0))

    @pytest.mark.parametrize("kind", ["tanh", "sigmoid", "exp", "neg"])
    def test_grad_check(self, kind):
        err = grad_check(lambda x: T.reduce("sum", T.unary_map(kind, x)), Tensor(vec(8)))
        assert err < 1e-6

    def test_relu_grad_away_from_kink(self):
        x = Tensor(np.array([-0.7, -0.2, 0.3, 0.9]))
        assert grad_check(lambda t: T.reduce("sum", T.relu(t) * T.relu(t)), x) < 1e-6


class TestBinary:
    def test_add(self):
        assert np.array_equal((Tensor([1.0, 2.0]) + Tensor([3.0, 4.0])).data, [4.0, 6.0])

    def test_scalar_zero(self):
        out = Tensor(np.arange(6.0).reshape(2, 3)) * 0.0
        assert np.array_equal(out.data, np.zeros((2, 3)))

    def test_division_by_zero(self):
        with pytest.raises(DivisionByZeroError):
            Tensor([1.0, 2.0, 3.0]) / Tensor([1.0, 0.0, 1.0])

    def test_incompatible_shapes(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones(2))

    def test_per_channel_broadcast(self):
        m = Tensor(np.ones((4, 3)))
        b = Tensor([1.0, 2.0, 3.0])
        assert np.array_equal((m + b).data, np.ones((4, 3)) + [1, 2, 3])

    @pytest.mark.parametrize("kind", ["add", "sub", "mul", "div"])
    def test_grad_both_operands_with_broadcast(self, kind):
        rng = np.random.default_rng(1)
        a0 = rng.uniform(-1, 1, (5, 3))
        b0 = rng.uniform(0.5, 1.5, 3)
        assert grad_check(lambda a: _sq(T.binary_op(kind, a, Tensor(b0))), Tensor(a0)) < 1e-6
        assert grad_check(lambda b: _sq(T.binary_op(kind, Tensor(a0), b)), Tensor(b0)) < 1e-6


class TestMatmul:
    def test_identity(self):
        a = np.random.default_rng(0).normal(size=(4, 4))
        assert np.array_equal(T.matmul(Tensor(a), Tensor(np.eye(4))).data, a)

    def test_hand_dot(self):
        assert T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data.tolist() == [[11.0]]

    def test_inner_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_grad(self):
        rng = np.random.default_rng(2)
        b0 = rng.uniform(-1, 1, (3, 2))
        a0 = rng.uniform(-1, 1, (4, 3))
        assert grad_check(lambda a: T.reduce("sum", T.tanh(T.matmul(a, Tensor(b0)))), Tensor(a0)) < 1e-6
        assert grad_check(lambda b: T.reduce("sum", T.tanh(T.matmul(Tensor(a0), b))), Tensor(b0)) < 1e-6

    def test_batched_grad_against_shared_weight(self):
        rng = np.random.default_rng(3)
        a0 = rng.uniform(-1, 1, (2, 4, 3))
        b0 = rng.uniform(-1, 1, (3, 2))
        assert grad_check(lambda b: _sq(T.matmul(Tensor(a0), b)), Tensor(b0)) < 1e-6


class TestReduce:
    def test_values(self):
        assert T.reduce("mean", Tensor([1.0, 2.0, 3.0])).item() == 2.0
        assert T.reduce("sum", Tensor(np.zeros(4))).item() == 0.0
        assert T.reduce("max", Tensor([-1.0, 5.0, 2.0])).item() == 5.0

    def test_errors(self):
        with pytest.raises(ShapeError):
            T.reduce("sum", Tensor(np.zeros(0)))
        with pytest.raises(ShapeError):
            T.reduce("sum", Tensor(np.zeros((2, 2))), axis=2)

    @pytest.mark.parametrize("kind", ["sum", "mean", "max"])
    @pytest.mark.parametrize("axis", [None, 0, 1])
    def test_grad(self, kind, axis):
        x = Tensor(vec(12, seed=4).reshape(3, 4))
        assert grad_check(lambda t: _sq(T.reduce(kind, t, axis=axis)), x) < 1e-6


class TestSoftmax:
    def test_symmetric(self):
        assert np.array_equal(T.softmax(Tensor([0.0, 0.0]), axis=-1).data, [0.5, 0.5])

    @given(st.floats(-1e3, 1e3))
    def test_uniform_for_constant(self, c):
        np.testing.assert_allclose(T.softmax(Tensor([c, c, c]), axis=-1).data, 1 / 3, atol=1e-15)

    def test_direct_formula(self):
        x = np.array([1.0, 2.0, 3.0])
        want = np.exp(x) / np.exp(x).sum()
        np.testing.assert_allclose(T.softmax(Tensor(x), axis=-1).data, want, rtol=0, atol=1e-12)

    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_sums_to_one_and_shift_invariant(self, x, c):
        y = T.softmax(Tensor(x), axis=1).data
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(T.softmax(Tensor(x + c), axis=1).data, y, atol=1e-12)

    def test_grad(self):
        w = vec(5, seed=9)
        assert grad_check(lambda t: T.reduce("sum", T.softmax(t, axis=-1) * Tensor(w)), Tensor(vec(5, seed=5))) < 1e-6


class TestStructural:
    def test_shift(self):
        x = Tensor(np.arange(1.0, 5.0).reshape(4, 1))
        assert T.shift(x, 2).data.ravel().tolist() == [0.0, 0.0, 1.0, 2.0]
        assert T.shift(x, 9).data.ravel().tolist() == [0.0] * 4

    @pytest.mark.parametrize(
        "fn",
        [
            lambda t: T.reshape(t, (4, 3)),
            lambda t: T.transpose(t),
            lambda t: T.slice_axis(t, 1, 3, axis=0),
            lambda t: T.take(t, 2, axis=1),
            lambda t: T.stack([t, t * 2.0], axis=0),
            lambda t: T.concat([t, T.tanh(t)], axis=1),
            lambda t: T.shift(t, 1),
        ],
    )
    def test_grad(self, fn):
        w = None

        def f(t):
            nonlocal w
            out = fn(t)
            if w is None:
                w = Tensor(np.random.default_rng(6).uniform(-1, 1, out.shape))
            return T.reduce("sum", T.tanh(out) * w)

        assert grad_check(f, Tensor(vec(12, seed=7).reshape(3, 4))) < 1e-6


class TestBackward:
    def test_square(self):
        with Tape() as tape:
            x = Tensor(3.0, requires_grad=True)
            y = x * x
        assert backward(tape, y)[x.node_id].item() == 6.0

    def test_tanh_at_zero(self):
        with Tape() as tape:
            x = Tensor(0.0, requires_grad=True)
            y = T.tanh(x)
        assert backward(tape, y)[x.node_id].item() == 1.0

    def test_unreached_leaf_gets_zero(self):
        with Tape() as tape:
            x = Tensor([1.0, 2.0], requires_grad=True)
            z = Tensor(np.ones((2, 2)), requires_grad=True)
            y = T.reduce("sum", x * x)
        g = backward(tape, y)
        assert np.array_equal(g[z.node_id].data, np.zeros((2, 2)))

    def test_non_scalar_loss(self):
        with Tape() as tape:
            x = Tensor([1.0, 2.0], requires_grad=True)
            y = x * 2.0
        with pytest.raises(ShapeError):
            backward(tape, y)

    def test_tape_single_use(self):
        with Tape() as tape:
            x = Tensor(1.0, requires_grad=True)
            y = x * x
        backward(tape, y)
        with pytest.raises(TapeError):
            backward(tape, y)

    def test_random_composite_graph(self):
        rng = np.random.default_rng(11)
        w = Tensor(rng.uniform(-1, 1, (4, 3)))

        def f(x):
            h = T.tanh(T.matmul(x, w))
            g = T.sigmoid(h) * h + T.exp(h * 0.5)
            return T.reduce("mean", T.softmax(g, axis=-1) * g)

        assert grad_check(f, Tensor(rng.uniform(-1, 1, (2, 4)))) < 1e-6

    def test_sum_gradient_is_exact(self):
        assert grad_check(lambda t: T.reduce("sum", t), Tensor(vec(6))) < 1e-9

    def test_sigmoid_sum_oracle(self):
        assert grad_check(lambda t: T.reduce("sum", T.sigmoid(t)), Tensor(vec(8, seed=3))) < 1e-6

    @settings(max_examples=25, deadline=None)
    @given(arrays(np.float64, 6, elements=finite), arrays(np.float64, 6, elements=finite))
    def test_linearity(self, x0, w0):
        w = Tensor(w0)

        def grads(which):
            with Tape() as tape:
                x = Tensor(x0, requires_grad=True)
                l1 = T.reduce("sum", T.tanh(x) * w)
                l2 = T.reduce("sum", x * x)
                loss = {"1": l1, "2": l2, "both": l1 + l2}[which]
            return backward(tape, loss)[x.node_id].data

        np.testing.assert_allclose(grads("both"), grads("1") + grads("2"), atol=1e-14)

    def test_deterministic_forward(self):
        x = vec(50, seed=8)
        a = T.softmax(T.tanh(Tensor(x)), axis=-1).data
        b = T.softmax(T.tanh(Tensor(x)), axis=-1).data
        assert np.array_equal(a, b)

    def test_tape_topological(self):
        with Tape() as tape:
            x = Tensor([0.5], requires_grad=True)
            T.reduce("sum", T.tanh(x) * x)
        seen = set(tape.leaves)
        for out_id, in_ids, _ in tape.records:
            assert all(i in seen or i not in tape._known for i in in_ids)
            seen.add(out_id)
