"""Autodiff tensor: op values, gradient rules, contracts and determinism."""
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dfast import tensor as T
from dfast.errors import ContractError, DimensionError, NumericError
from dfast.gradcheck import directional_check, finite_diff_check
from dfast.rng import make_rng, trunc_normal
from dfast.tensor import Tensor, backward, graph_order, no_grad

from gradcases import ALL_CASES, run_case

TOL = 1e-4
finite_rows = arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 8)),
                     elements=st.floats(-50, 50, allow_nan=False))


class TestExamples:
    def test_gelu_zero(self, backend):
        assert T.gelu(Tensor([0.0])).item() == 0.0

    def test_softmax_equal_logits(self, backend):
        np.testing.assert_allclose(T.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)

    def test_layer_norm_constant_vector(self, backend):
        x = Tensor(np.full((1, 5), 3.0))
        y = T.layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
        np.testing.assert_array_equal(y.data, np.zeros((1, 5)))

    def test_square_gradient(self):
        x = Tensor([3.0], requires_grad=True)
        backward((x * x).sum())
        assert x.grad.tolist() == [6.0]

    def test_mean_gradient(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        backward(x.mean())
        assert x.grad.tolist() == [0.25] * 4


class TestFiniteDiffCheck:
    def test_sigmoid_at_zero(self):
        assert finite_diff_check(T.sigmoid, Tensor([0.0], dtype=np.float64)) < 1e-6

    def test_softmax_of_linear(self, rng):
        w = Tensor(rng.standard_normal((3, 3)), dtype=np.float64)
        x = Tensor(rng.standard_normal((3, 3)), dtype=np.float64)
        assert finite_diff_check(lambda x: T.softmax(T.linear(x, w)), x) < 1e-4

    def test_constant_function(self):
        x = Tensor([1.0, 2.0], dtype=np.float64)
        assert finite_diff_check(lambda x: Tensor([5.0], dtype=np.float64), x) == 0.0

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            finite_diff_check(T.gelu, Tensor([1.0]), step=0.0)

    def test_detects_wrong_gradient(self):
        # a backward rule that is off by a factor 2 must be caught
        def bad_square(x):
            xd = x.data
            return T._result(xd * xd, (x,), lambda g: (g * xd,), "bad_square")

        assert finite_diff_check(bad_square, Tensor([1.5], dtype=np.float64)) > 0.1
        assert directional_check(bad_square, [Tensor([1.5, -2.0], dtype=np.float64)]) > 0.1


class TestGradients:
    @pytest.mark.parametrize("name", sorted(ALL_CASES))
    def test_randomized_finite_differences(self, name, backend):
        rng = make_rng(99, sorted(ALL_CASES).index(name))
        for _ in range(5):
            assert run_case(ALL_CASES[name], rng) < TOL

    def test_shared_input_accumulates(self, t64):
        x = t64(3)
        backward((x * x + x).sum())
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_grad_accumulates_across_backward_calls(self):
        x = Tensor([2.0], requires_grad=True)
        backward((x * x).sum())
        backward((x * x).sum())
        assert x.grad.tolist() == [8.0]

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        assert not y.requires_grad
        assert y.is_leaf

    def test_grad_has_parameter_shape(self, t64):
        x, b = t64(4, 3), t64(3)
        backward((x + b).sum())
        assert x.grad.shape == x.shape and b.grad.shape == b.shape


class TestGraph:
    def test_topological_order_and_single_visit(self, t64):
        a, b = t64(2), t64(2)
        c = a * b
        d = c + a
        loss = (d * c).sum()
        order = graph_order(loss)
        assert len(order) == len({id(n) for n in order})
        pos = {id(n): i for i, n in enumerate(order)}
        for node in order:
            for parent in node._parents:
                assert pos[id(parent)] < pos[id(node)]
        assert order[-1] is loss

    def test_deep_chain_does_not_recurse(self):
        x = Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = y * 1.0
        backward(y.sum())
        assert x.grad.tolist() == [1.0]


class TestContracts:
    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4,\)"):
            Tensor(np.ones((2, 3))) + Tensor(np.ones(4))

    def test_backward_on_non_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError, match="scalar"):
            backward(x * 2.0)

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_non_finite_output(self):
        with pytest.raises(NumericError, match="mul"):
            Tensor([1e300]) * Tensor([1e300])

    def test_dropout_rate_range(self):
        with pytest.raises(ContractError):
            T.dropout(Tensor([1.0]), 1.0, True, make_rng(0))
        with pytest.raises(ContractError):
            T.dropout(Tensor([1.0]), -0.1, False)

    def test_layer_norm_parameter_shapes(self):
        with pytest.raises(DimensionError):
            T.layer_norm(Tensor(np.ones((2, 4))), Tensor(np.ones(3)), Tensor(np.zeros(3)))

    def test_zero_size_tensor(self):
        with pytest.raises(DimensionError):
            Tensor(np.ones((0, 3)))


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(finite_rows)
    def test_softmax_is_a_distribution(self, x):
        y = T.softmax(Tensor(x)).data
        assert (y >= 0).all()
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)

    @settings(max_examples=40, deadline=None)
    @given(finite_rows, st.floats(0.0, 0.95))
    def test_dropout_identity_when_not_training(self, x, rate):
        t = Tensor(x)
        assert T.dropout(t, rate, False) is t
        assert T.dropout(t, 0.0, True, make_rng(0)) is t

    def test_dropout_inverted_scaling(self):
        x = Tensor(np.ones(200_000))
        y = T.dropout(x, 0.25, True, make_rng(5)).data
        assert set(np.unique(y)) <= {0.0, 1.0 / 0.75}
        assert abs(y.mean() - 1.0) < 0.01

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 16)),
                  elements=st.floats(-100, 100, allow_nan=False)))
    def test_layer_norm_statistics(self, x):
        x = x + np.arange(x.shape[1]) * 3.0
        assume((x.var(axis=-1) > 1.0).all())  # variance well above epsilon
        n = x.shape[1]
        y = T.layer_norm(Tensor(x), Tensor(np.ones(n)), Tensor(np.zeros(n))).data
        assert np.abs(y.mean(axis=-1)).max() <= 1e-6
        var = x.var(axis=-1)
        np.testing.assert_allclose(y.var(axis=-1), var / (var + 1e-5), atol=1e-12)
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-4)

    def test_determinism(self, backend):
        def run():
            rng = make_rng(42)
            w = Tensor(trunc_normal(rng, (8, 5)), requires_grad=True)
            x = Tensor(rng.standard_normal((4, 5)).astype(np.float32))
            h = T.dropout(T.gelu(T.linear(x, w)), 0.2, True, rng)
            loss = T.softmax(h).mean()
            backward(loss)
            return loss.data.tobytes(), w.grad.tobytes()

        assert run() == run()

    def test_float32_stays_float32(self):
        x = Tensor(np.ones((2, 3), dtype=np.float32), requires_grad=True)
        w = Tensor(np.ones((4, 3), dtype=np.float32), requires_grad=True)
        y = T.layer_norm(T.gelu(T.linear(x, w)) * 2.0 + 1.0, Tensor(np.ones(4, np.float32)),
                         Tensor(np.zeros(4, np.float32)))
        backward(y.sum())
        assert y.dtype == np.float32 and w.grad.dtype == np.float32

    def test_gelu_tanh_form(self):
        x = np.linspace(-4, 4, 17)
        want = 0.5 * x * (1 + np.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
        np.testing.assert_allclose(T.gelu(Tensor(x)).data, want, rtol=1e-12, atol=1e-15)

    def test_attention_weights_are_rows_of_probabilities(self, rng):
        q, k, v = (Tensor(rng.standard_normal((2, 3, 4))) for _ in range(3))
        _, attn = T.scaled_dot_attention(q, k, v, return_weights=True)
        np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-12)


class TestRng:
    def test_streams_are_reproducible_and_keyed(self):
        a = make_rng(1, 2).random(4)
        assert np.array_equal(a, make_rng(1, 2).random(4))
        assert not np.array_equal(a, make_rng(1, 3).random(4))

    def test_trunc_normal_bounds(self):
        x = trunc_normal(make_rng(0), (10_000,), std=0.02)
        assert np.abs(x).max() <= 0.04
        assert abs(x.std() - 0.02 * 0.88) < 0.002  # std of N(0,1) truncated at ±2 is 0.88
