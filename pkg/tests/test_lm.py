import numpy as np
import pytest

import oracles as orc
from tokendrive.errors import DimensionError, EmptyInputError
from tokendrive.lm import (
    INSTRUCTION, VISUAL, DdiaBlock, LiteLM, TokenStream, attention_masks, build_stream,
    ddia_attention, ddia_weights, to_waypoints,
)
from tokendrive.numerics import Initializer, ParamStore, RngStream, Tensor, grad_check, ops


def random_stream(rng, n_t, n_v, dim=8):
    instr = Tensor(rng.standard_normal((n_t, dim)))
    sizes = []
    left = n_v
    while left > 0:
        s = int(rng.integers(1, min(left, 5) + 1))
        sizes.append(s)
        left -= s
    frames = [Tensor(rng.standard_normal((s, dim))) for s in sizes]
    return build_stream(instr, frames)


def make_lm(dim=16, k=3, blocks=2, heads=2, seed=0, mode="ddia", vocab=10):
    store = ParamStore()
    return store, LiteLM(store, vocab, dim, k, Initializer(RngStream(seed)), blocks=blocks,
                         heads=heads, mode=mode)


class TestStream:
    def test_layout(self, rng=np.random.default_rng(0)):
        s = build_stream(Tensor(np.zeros((3, 4))), [Tensor(np.ones((2, 4))), Tensor(np.ones((1, 4)))])
        assert s.segment.tolist() == [0, 0, 0, 1, 1, 1]
        assert s.position.tolist() == list(range(6))
        assert s.frame_id.tolist() == [-1, -1, -1, 0, 0, 1]

    def test_empty_instruction(self):
        with pytest.raises(EmptyInputError):
            build_stream(Tensor(np.zeros((0, 4))), [Tensor(np.ones((2, 4)))])


class TestDdiaAttention:
    def test_no_visual_is_bidirectional_rope(self):
        rng = np.random.default_rng(1)
        q, k, v = (rng.standard_normal((4, 8)) for _ in range(3))
        s = build_stream(Tensor(np.zeros((4, 8))), [])
        out = ddia_attention(Tensor(q), Tensor(k), Tensor(v), s).data
        qr = ops.rope_rows(Tensor(q), range(4)).data
        kr = ops.rope_rows(Tensor(k), range(4)).data
        p = ops.softmax_rows(Tensor(qr @ kr.T / np.sqrt(8))).data
        np.testing.assert_allclose(out, p @ v, atol=1e-14)

    def test_first_visual_query_sees_single_instruction(self):
        rng = np.random.default_rng(2)
        q, k, v = (rng.standard_normal((3, 4)) for _ in range(3))
        s = build_stream(Tensor(np.zeros((1, 4))), [Tensor(np.zeros((2, 4)))])
        _, allowed, w = ddia_weights(q, k, s)
        assert w[1].tolist() == [1.0, 0.0, 0.0]
        out = ddia_attention(Tensor(q), Tensor(k), Tensor(v), s).data
        np.testing.assert_array_equal(out[1], v[0])

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(3)
        s = random_stream(rng, 3, 6, dim=8)
        q, k, v = (rng.standard_normal((s.length, 8)) for _ in range(3))
        out = ddia_attention(Tensor(q), Tensor(k), Tensor(v), s).data
        expected = orc.ddia(q.tolist(), k.tolist(), v.tolist(), s.segment.tolist(), s.position.tolist())
        assert np.abs(out - np.array(expected)).max() <= 1e-10

    def test_structure(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            s = random_stream(rng, int(rng.integers(1, 6)), int(rng.integers(1, 12)))
            q, k = rng.standard_normal((s.length, 4)), rng.standard_normal((s.length, 4))
            logits, allowed, w = ddia_weights(q, k, s)
            instr = s.segment == INSTRUCTION
            vis = ~instr
            assert np.all(w[np.ix_(instr, vis)] == 0.0)
            later = s.position[None, :] >= s.position[:, None]
            assert np.all(w[np.ix_(vis, vis)][later[np.ix_(vis, vis)]] == 0.0)
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)
            shift = int(rng.integers(1, 500))
            logits2, _, _ = ddia_weights(q, k, s.shifted(shift))
            np.testing.assert_array_equal(logits2[np.ix_(vis, instr)], logits[np.ix_(vis, instr)])
            vv = allowed & np.outer(vis, vis)
            assert np.abs(logits2[vv] - logits[vv]).max(initial=0.0) <= 1e-9

    def test_causal_mode_masks(self):
        s = build_stream(Tensor(np.zeros((2, 4))), [Tensor(np.zeros((3, 4)))])
        allowed, rope = attention_masks(s, "causal")
        np.testing.assert_array_equal(allowed, np.tril(np.ones((5, 5), bool)))
        assert rope.all() or np.array_equal(rope, allowed)

    def test_odd_head_dim(self):
        s = build_stream(Tensor(np.zeros((1, 3))), [])
        with pytest.raises(DimensionError):
            ddia_attention(Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))), Tensor(np.ones((1, 3))), s)

    def test_block_gradients(self):
        rng = np.random.default_rng(5)
        store = ParamStore()
        blk = DdiaBlock(store, "b", 8, 2, Initializer(RngStream(1)))
        s = random_stream(rng, 2, 5, dim=8)
        x = Tensor(s.embeddings.data)
        rep = grad_check(lambda x, *_: blk(x, s), {"x": x, **{n: store[n] for n in store}})
        assert rep.max_error <= 1e-4, rep.errors


def block_oracle(store, name, x, stream, heads):
    ln = lambda t, nm: orc.layer_norm(t, orc.lst(store[f"{name}.{nm}.g"].data),
                                      orc.lst(store[f"{name}.{nm}.b"].data))
    h = ln(x, "ln1")
    q, k, v = (orc.linear(h, *orc.params_of(store, f"{name}.{p}")) for p in "qkv")
    dim = len(q[0])
    d = dim // heads
    att = [[0.0] * dim for _ in range(len(q))]
    for hd in range(heads):
        sl = lambda m: [row[hd * d:(hd + 1) * d] for row in m]
        o = orc.ddia(sl(q), sl(k), sl(v), stream.segment.tolist(), stream.position.tolist())
        for i in range(len(q)):
            att[i][hd * d:(hd + 1) * d] = o[i]
    x = orc.add(x, orc.linear(att, *orc.params_of(store, f"{name}.o")))
    f = orc.mlp(ln(x, "ln2"), [orc.params_of(store, f"{name}.ff.up"), orc.params_of(store, f"{name}.ff.down")])
    return orc.add(x, f)


class TestLmForward:
    def test_instruction_states_ignore_visual_tokens(self):
        rng = np.random.default_rng(6)
        store, lm = make_lm()
        frame = Tensor(rng.standard_normal((3, 16)))
        other = Tensor(rng.standard_normal((3, 16)))
        a = lm.forward([1, 2, 3], [frame, frame]).hidden.data
        b = lm.forward([1, 2, 3], [other, other]).hidden.data
        np.testing.assert_array_equal(a[:3], b[:3])

    def test_zero_blocks_pass_through(self):
        rng = np.random.default_rng(7)
        store, lm = make_lm()
        for n in store.names("lm.block"):
            if n.endswith((".o.w", ".o.b", ".down.w", ".down.b")):
                store[n].data[:] = 0.0
        frames = [Tensor(rng.standard_normal((2, 16)))]
        out = lm.forward([4, 5], frames)
        np.testing.assert_array_equal(out.hidden.data, out.stream.embeddings.data)

    def test_composed_oracle(self):
        rng = np.random.default_rng(8)
        store, lm = make_lm(dim=8, blocks=2, heads=2, seed=3)
        frames = [Tensor(rng.standard_normal((2, 8))), Tensor(rng.standard_normal((3, 8)))]
        out = lm.forward([0, 7, 2], frames)
        h = orc.lst(out.stream.embeddings.data)
        for i in range(2):
            h = block_oracle(store, f"lm.block{i}", h, out.stream, 2)
        np.testing.assert_allclose(out.hidden.data, h, atol=1e-9)

    def test_empty_instruction(self):
        store, lm = make_lm()
        with pytest.raises(EmptyInputError):
            lm.forward([], [Tensor(np.zeros((1, 16)))])

    def test_causal_mode_runs(self):
        rng = np.random.default_rng(9)
        store, lm = make_lm(mode="causal")
        out = lm.forward([1, 2], [Tensor(rng.standard_normal((2, 16)))], record_attention=True)
        for layer in out.attention:
            for w in layer:
                assert np.all(np.triu(w, 1) == 0.0)


class TestPredictWaypoints:
    def test_zero_head_returns_bias(self):
        rng = np.random.default_rng(10)
        store, lm = make_lm(k=3)
        store["lm.head.1.w"].data[:] = 0.0
        b = np.arange(6.0).reshape(1, 6)
        store["lm.head.1.b"].data = b.copy()
        out = lm.forward([1], [Tensor(rng.standard_normal((2, 16)))])
        wp = to_waypoints(lm.predict_waypoints(out.hidden, out.stream))
        np.testing.assert_array_equal(wp, b.reshape(3, 2))

    def test_depends_only_on_last_visual_row(self):
        rng = np.random.default_rng(11)
        store, lm = make_lm()
        s = build_stream(Tensor(np.zeros((1, 16))), [Tensor(np.zeros((2, 16)))])
        h1 = rng.standard_normal((3, 16))
        h2 = h1.copy()
        h2[:2] = rng.standard_normal((2, 16))
        a = lm.predict_waypoints(Tensor(h1), s).data
        b = lm.predict_waypoints(Tensor(h2), s).data
        np.testing.assert_array_equal(a, b)
        h2[2] += 1.0
        assert not np.array_equal(a, lm.predict_waypoints(Tensor(h2), s).data)

    def test_needs_visual_token(self):
        store, lm = make_lm()
        s = build_stream(Tensor(np.zeros((1, 16))), [])
        with pytest.raises(EmptyInputError):
            lm.predict_waypoints(Tensor(np.zeros((1, 16))), s)
