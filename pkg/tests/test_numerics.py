import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tokendrive.errors import DimensionError, EmptyInputError, NumericError, ParameterError
from tokendrive.numerics import (
    Initializer, ParamStore, RngStream, Tensor, avg_rows, grad_check, gumbel_softmax,
    mlp_apply, MLP, ops, rope_rotate,
)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def make_mlp(widths, seed=0):
    store = ParamStore()
    MLP(store, "m", widths, Initializer(RngStream(seed)))
    return store


class TestMlp:
    def test_identity_layer(self, rng):
        store = make_mlp([4, 4])
        store["m.0.w"].data = np.eye(4)
        x = Tensor(rng.standard_normal((3, 4)))
        np.testing.assert_array_equal(mlp_apply(store, "m", x, [4, 4]).data, x.data)

    def test_zero_weights_give_bias(self, rng):
        store = make_mlp([4, 3, 2])
        b = np.array([[0.5, -1.0, 2.0]])
        store["m.0.w"].data[:] = 0.0
        store["m.0.b"].data = b.copy()
        store["m.1.w"].data = np.eye(3)[:, :2]
        x = Tensor(rng.standard_normal((5, 4)))
        out = mlp_apply(store, "m", x, [4, 3, 2]).data
        gelu_b = ops.gelu(Tensor(b)).data
        np.testing.assert_allclose(out, np.repeat(gelu_b[:, :2], 5, axis=0), atol=0)

    def test_single_layer_zero_weights_is_bias(self, rng):
        store = make_mlp([4, 2])
        store["m.0.w"].data[:] = 0.0
        store["m.0.b"].data = np.array([[3.0, -4.0]])
        out = mlp_apply(store, "m", Tensor(rng.standard_normal((3, 4))), [4, 2]).data
        np.testing.assert_array_equal(out, np.tile([3.0, -4.0], (3, 1)))

    def test_gradients_match_finite_differences(self, rng):
        store = make_mlp([4, 2], seed=3)
        x = Tensor(rng.standard_normal((3, 4)))
        params = {"x": x, "w": store["m.0.w"], "b": store["m.0.b"]}
        rep = grad_check(lambda *_: mlp_apply(store, "m", x, [4, 2]), params)
        assert rep.max_error <= 1e-4

    def test_deep_mlp_gradients(self, rng):
        store = make_mlp([4, 6, 5, 2], seed=4)
        x = Tensor(rng.standard_normal((3, 4)))
        named = {"x": x, **{n: store[n] for n in store}}
        assert grad_check(lambda *_: mlp_apply(store, "m", x, [4, 6, 5, 2]), named).passed

    def test_shape_mismatch_names_layer(self, rng):
        store = make_mlp([4, 3, 2])
        with pytest.raises(DimensionError, match="m.0"):
            mlp_apply(store, "m", Tensor(rng.standard_normal((2, 5))), [4, 3, 2])
        with pytest.raises(DimensionError, match="m.1"):
            mlp_apply(store, "m", Tensor(rng.standard_normal((2, 4))), [4, 3, 3])


class TestAvgRows:
    def test_single_row(self):
        r = np.array([[1.5, -2.0, 7.0]])
        np.testing.assert_array_equal(avg_rows(Tensor(r)).data, r)

    def test_symmetry(self):
        np.testing.assert_array_equal(avg_rows(Tensor([[0.0, 2.0], [2.0, 0.0]])).data, [[1.0, 1.0]])

    def test_loop_oracle(self, rng):
        x = rng.standard_normal((5, 3))
        expected = [sum(x[i, j] for i in range(5)) / 5 for j in range(3)]
        np.testing.assert_allclose(avg_rows(Tensor(x)).data[0], expected, atol=1e-12)

    def test_backward_distributes(self, rng):
        x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        ops.sum_all(avg_rows(x)).backward()
        np.testing.assert_allclose(x.grad, np.full((4, 3), 0.25))

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            avg_rows(Tensor(np.zeros((0, 3))))


class TestGumbel:
    def test_saturated_logits_prefer_column0(self):
        s = gumbel_softmax(Tensor([[10.0, -10.0]]), 1.0, True, None, deterministic=True)
        assert s.soft.data[0, 1] < 1e-8
        np.testing.assert_array_equal(s.hard, [[1.0, 0.0]])

    def test_low_temperature_approaches_one_hot(self):
        logits = Tensor([[0.3, 0.0], [-1.0, 0.5], [2.0, -2.0], [0.1, 0.4], [0.0, -0.25], [1.0, 3.0]])
        s = gumbel_softmax(logits, 0.01, True, None, deterministic=True)
        np.testing.assert_allclose(s.soft.data, s.hard, atol=1e-6)

    def test_monte_carlo_matches_softmax(self):
        logits = np.array([[0.3, -0.2], [-1.0, 1.5], [0.0, 0.0], [2.0, 0.5]])
        draws = 100_000
        tiled = Tensor(np.tile(logits, (draws, 1)))
        s = gumbel_softmax(tiled, 1.0, True, RngStream(11))
        freq = s.hard[:, 1].reshape(draws, 4).mean(axis=0)
        expected = np.exp(logits[:, 1]) / np.exp(logits).sum(axis=1)
        assert np.all(np.abs(freq - expected) <= 0.01)

    def test_rows_are_one_hot_and_soft_sums_to_one(self, rng):
        s = gumbel_softmax(Tensor(rng.standard_normal((50, 2))), 0.7, True, RngStream(2))
        assert set(np.unique(s.hard)) <= {0.0, 1.0}
        np.testing.assert_array_equal(s.hard.sum(axis=1), np.ones(50))
        np.testing.assert_allclose(s.soft.data.sum(axis=1), 1.0, atol=1e-12)

    def test_straight_through_uses_hard_forward_soft_backward(self, rng):
        logits = Tensor(rng.standard_normal((5, 2)), requires_grad=True)
        s = gumbel_softmax(logits, 1.0, True, RngStream(5))
        np.testing.assert_array_equal(s.st.data, s.hard)
        ops.sum_all(ops.col_slice(s.st, 1, 2)).backward()
        y = s.soft.data
        # d y1 / d logits for softmax: y1 (delta - y)
        expected = np.stack([-y[:, 1] * y[:, 0], y[:, 1] * (1 - y[:, 1])], axis=1)
        np.testing.assert_allclose(logits.grad, expected, atol=1e-12)

    def test_same_stream_state_same_noise(self):
        a = gumbel_softmax(Tensor(np.zeros((8, 2))), 1.0, True, RngStream(9, 4))
        b = gumbel_softmax(Tensor(np.zeros((8, 2))), 1.0, True, RngStream(9, 4))
        np.testing.assert_array_equal(a.soft.data, b.soft.data)

    def test_bad_tau(self):
        with pytest.raises(ParameterError):
            gumbel_softmax(Tensor(np.zeros((2, 2))), 0.0, True, RngStream(0))


class TestRope:
    def test_position_zero_identity(self, rng):
        x = rng.standard_normal((1, 8))
        np.testing.assert_array_equal(rope_rotate(Tensor(x), 0).data, x)

    @given(m=st.integers(0, 5000), seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_norm_preserved(self, m, seed):
        x = np.random.default_rng(seed).standard_normal((1, 16))
        y = rope_rotate(Tensor(x), m).data
        assert abs(np.linalg.norm(y) - np.linalg.norm(x)) <= 1e-12 * max(1.0, np.linalg.norm(x))

    @given(m=st.integers(0, 300), n=st.integers(0, 300), s=st.integers(0, 300),
           seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_relative_position_identity(self, m, n, s, seed):
        g = np.random.default_rng(seed)
        q, k = g.standard_normal((1, 8)), g.standard_normal((1, 8))
        a = (rope_rotate(Tensor(q), m).data @ rope_rotate(Tensor(k), n).data.T)[0, 0]
        b = (rope_rotate(Tensor(q), m + s).data @ rope_rotate(Tensor(k), n + s).data.T)[0, 0]
        assert abs(a - b) <= 1e-9

    def test_pairs_rotate_by_expected_angle(self):
        d = 4
        x = np.array([[1.0, 0.0, 1.0, 0.0]])
        y = rope_rotate(Tensor(x), 3, base=100.0).data[0]
        for t in range(d // 2):
            ang = 3 * 100.0 ** (-2 * t / d)
            np.testing.assert_allclose(y[2 * t:2 * t + 2], [np.cos(ang), np.sin(ang)], atol=1e-15)

    def test_odd_width(self):
        with pytest.raises(DimensionError):
            rope_rotate(Tensor(np.ones((1, 5))), 1)

    def test_backward(self, rng):
        x = Tensor(rng.standard_normal((3, 8)))
        pos = [0, 4, 11]
        assert grad_check(lambda t: ops.rope_rows(t, pos, head_dim=4), [x]).max_error <= 1e-6


class TestPrimitiveGradients:
    @pytest.mark.parametrize("name,fn", [
        ("softmax", lambda x: ops.softmax_rows(x)),
        ("log_softmax", lambda x: ops.log_softmax_rows(x)),
        ("layer_norm", lambda x: ops.layer_norm(x)),
        ("gelu", lambda x: ops.gelu(x)),
        ("tanh", lambda x: ops.tanh(x)),
        ("exp", lambda x: ops.exp(x)),
        ("square", lambda x: ops.square(x)),
        ("avg_rows", lambda x: ops.avg_rows(x)),
        ("sum_cols", lambda x: ops.sum_cols(x)),
        ("transpose", lambda x: ops.transpose(x)),
        ("take_rows", lambda x: ops.take_rows(x, [3, 0, 0])),
        ("scatter_rows", lambda x: ops.scatter_rows(6, [5, 1, 2, 0], x)),
        ("col_slice", lambda x: ops.col_slice(x, 1, 3)),
        ("concat", lambda x: ops.concat_cols([x, ops.tanh(x)])),
    ])
    def test_unary(self, name, fn, rng):
        x = Tensor(rng.standard_normal((4, 5)))
        rep = grad_check(fn, [x], tol=1e-6)
        assert rep.passed, (name, rep.errors)

    def test_masked_softmax(self, rng):
        allowed = rng.random((4, 6)) < 0.6
        allowed[:, 0] = True
        x = Tensor(rng.standard_normal((4, 6)))
        y = ops.softmax_rows(x, allowed).data
        assert np.all(y[~allowed] == 0.0)
        np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-12)
        assert grad_check(lambda t: ops.softmax_rows(t, allowed), [x], tol=1e-6).passed

    def test_binary_broadcast(self, rng):
        a = Tensor(rng.standard_normal((4, 3)))
        b = Tensor(rng.standard_normal((1, 3)))
        c = Tensor(rng.standard_normal((4, 1)))
        rep = grad_check(lambda a, b, c: (a * b + c) - a @ ops.transpose(a) @ a * c, [a, b, c])
        assert rep.passed

    def test_linear_map_exact(self, rng):
        a = Tensor(rng.standard_normal((3, 4)))
        w = Tensor(rng.standard_normal((4, 2)))
        assert grad_check(lambda a, w: a @ w, [a, w], tol=1e-9).max_error <= 1e-9

    def test_random_compositions(self):
        # Random chains of primitives keep agreeing with finite differences.
        unary = [ops.tanh, ops.gelu, ops.layer_norm, ops.softmax_rows,
                 lambda t: ops.rope_rows(t, range(t.rows), head_dim=2)]
        for seed in range(10):
            g = np.random.default_rng(seed)
            x = Tensor(g.standard_normal((3, 4)))
            w = Tensor(g.standard_normal((4, 4)))
            chain = [unary[i] for i in g.integers(0, len(unary), size=4)]

            def fn(x, w, chain=chain):
                h = x
                for f in chain:
                    h = f(h @ w) + h
                return h

            assert grad_check(fn, [x, w]).max_error <= 1e-4


class TestInvariants:
    @given(seed=st.integers(0, 2**32 - 1), rows=st.integers(1, 8), cols=st.integers(2, 12))
    @settings(max_examples=40, deadline=None)
    def test_softmax_and_layer_norm(self, seed, rows, cols):
        x = np.random.default_rng(seed).standard_normal((rows, cols)) * 5
        s = ops.softmax_rows(Tensor(x)).data
        assert np.all(np.abs(s.sum(axis=1) - 1) <= 1e-12)
        ln = ops.layer_norm(Tensor(x), eps=0.0).data
        assert np.all(np.abs(ln.mean(axis=1)) <= 1e-9)
        assert np.all(np.abs(ln.var(axis=1) - 1) <= 1e-6)

    def test_non_finite_is_reported(self):
        with pytest.raises(NumericError, match="log"):
            ops.log(Tensor([[0.0, 1.0]]))

    def test_rng_stream_reproducible(self):
        a = RngStream(123, 5)
        b = RngStream(123, 5)
        np.testing.assert_array_equal(a.normal((3, 3)), b.normal((3, 3)))
        np.testing.assert_array_equal(a.gumbel((2,)), b.gumbel((2,)))
        assert a.counter == 7

    def test_rng_stream_independent_counters(self):
        a = RngStream(1, 0).normal((4,))
        b = RngStream(1, 1).normal((4,))
        assert not np.array_equal(a, b)

    def test_no_grad_records_nothing(self):
        from tokendrive.numerics import no_grad
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with no_grad():
            y = ops.tanh(x)
        assert not y.requires_grad

    def test_param_store_names_unique(self):
        store = ParamStore()
        store.add("a.w", np.zeros((2, 2)))
        with pytest.raises(ParameterError):
            store.add("a.w", np.zeros((2, 2)))
