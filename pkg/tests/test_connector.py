import numpy as np
import pytest

import oracles as orc
from tokendrive.errors import ConfigError, ConsistencyError, DimensionError, EmptyInputError
from tokendrive.mefa import MemoryBank, Mefa, memory_push
from tokendrive.numerics import Initializer, ParamStore, RngStream, Tensor, grad_check, ops
from tokendrive.reconstruct import Reconstructor
from tokendrive.sparsify import RetentionMask, Sparsifier, gather_kept, sample_mask, scatter_rows_back


def init(seed=0):
    return Initializer(RngStream(seed))


@pytest.fixture
def rng():
    return np.random.default_rng(3)


# --- sparsifier -----------------------------------------------------------

class TestScoreTokens:
    def test_odd_width_rejected(self):
        with pytest.raises(ConfigError):
            Sparsifier(ParamStore(), 7, init())

    def test_single_token_uses_itself_as_global(self, rng):
        store = ParamStore()
        sp = Sparsifier(store, 8, init())
        F = Tensor(rng.standard_normal((1, 8)))
        L = sp.local(F).data
        expected = orc.softmax(orc.mlp(orc.lst(np.concatenate([L, L], axis=1)), [
            orc.params_of(store, "sparsify.decision.0"), orc.params_of(store, "sparsify.decision.1")])[0])
        np.testing.assert_allclose(sp.score_tokens(F).data[0], expected, atol=1e-12)

    def test_zero_decision_gives_half(self, rng):
        store = ParamStore()
        sp = Sparsifier(store, 8, init())
        store["sparsify.decision.1.w"].data[:] = 0.0
        S = sp.score_tokens(Tensor(rng.standard_normal((5, 8)))).data
        np.testing.assert_array_equal(S, np.full((5, 2), 0.5))

    def test_loop_oracle(self, rng):
        store = ParamStore()
        sp = Sparsifier(store, 8, init(1))
        F = rng.standard_normal((6, 8))
        L = orc.linear(orc.lst(F), *orc.params_of(store, "sparsify.local.0"))
        G = [sum(L[i][c] for i in range(6)) / 6 for c in range(4)]
        GL = [G + row for row in L]
        z = orc.mlp(GL, [orc.params_of(store, "sparsify.decision.0"),
                         orc.params_of(store, "sparsify.decision.1")])
        expected = [orc.softmax(r) for r in z]
        S = sp.score_tokens(Tensor(F)).data
        np.testing.assert_allclose(S, expected, atol=1e-12)
        np.testing.assert_allclose(S.sum(axis=1), 1.0, atol=1e-12)

    def test_permutation_equivariance(self, rng):
        sp = Sparsifier(ParamStore(), 8, init(2))
        F = rng.standard_normal((7, 8))
        perm = rng.permutation(7)
        a = sp.score_tokens(Tensor(F)).data
        b = sp.score_tokens(Tensor(F[perm])).data
        np.testing.assert_allclose(b, a[perm], atol=1e-12)


class TestSampleMask:
    def test_eval_keep_all(self):
        m = sample_mask(Tensor(np.tile([0.01, 0.99], (9, 1))), 1.0, "eval", None)
        assert m.n_kept == 9
        np.testing.assert_array_equal(m.kept_indices, np.arange(9))

    def test_eval_floor_rule(self):
        S = np.tile([0.99, 0.01], (6, 1))
        S[4] = [0.98, 0.02]
        m = sample_mask(Tensor(S), 1.0, "eval", None)
        assert m.n_kept == 1 and m.kept_indices.tolist() == [4]

    def test_eval_deterministic(self, rng):
        S = ops.softmax_rows(Tensor(rng.standard_normal((10, 2)))).data
        a = sample_mask(Tensor(S), 1.0, "eval", None)
        b = sample_mask(Tensor(S), 1.0, "eval", None)
        np.testing.assert_array_equal(a.hard, b.hard)
        np.testing.assert_array_equal(a.hard, (S[:, 1] >= S[:, 0]).astype(float))

    def test_train_invariants(self, rng):
        for seed in range(20):
            S = ops.softmax_rows(Tensor(rng.standard_normal((12, 2)) * 2))
            m = sample_mask(S, 1.0, "train", RngStream(seed))
            assert 1 <= m.n_kept <= 12
            assert m.n_kept == int(m.hard.sum())
            np.testing.assert_array_equal(m.kept_indices, np.flatnonzero(m.hard))
            assert np.all((m.soft >= 0) & (m.soft <= 1))
            np.testing.assert_array_equal(m.st.data[:, 0], m.hard)

    def test_train_floor_rule_keeps_soft_argmax(self):
        S = Tensor(np.tile([1 - 1e-9, 1e-9], (5, 1)))
        m = sample_mask(S, 1.0, "train", RngStream(0))
        assert m.n_kept == 1
        assert m.kept_indices[0] == int(np.argmax(m.soft))

    def test_straight_through_gradient_is_live(self, rng):
        store = ParamStore()
        sp = Sparsifier(store, 8, init(4))
        F = Tensor(rng.standard_normal((6, 8)))
        w = Tensor(rng.standard_normal((8, 1)))

        def loss(relaxed=False):
            _, m = sp(F, 1.0, "train", RngStream(5), relaxed=relaxed)
            return ops.sum_all(gather_kept(F, m) @ w)

        store.zero_grad()
        loss().backward()
        g = store.grad("sparsify.decision.1.w")
        assert np.linalg.norm(g) > 0
        names = {n: store[n] for n in store.names("sparsify.decision")}
        assert grad_check(lambda *_: loss(relaxed=True), names).passed


class TestGatherKept:
    def test_all_ones(self, rng):
        F = Tensor(rng.standard_normal((5, 4)))
        np.testing.assert_array_equal(gather_kept(F, RetentionMask.from_hard(np.ones(5))).data, F.data)

    def test_single_token(self, rng):
        F = Tensor(rng.standard_normal((5, 4)))
        out = gather_kept(F, RetentionMask.from_hard(np.eye(5)[3])).data
        np.testing.assert_array_equal(out, F.data[[3]])

    def test_round_trip(self, rng):
        F = rng.standard_normal((9, 4))
        hard = (rng.random(9) < 0.5).astype(float)
        hard[0] = 1
        m = RetentionMask.from_hard(hard)
        back = scatter_rows_back(gather_kept(Tensor(F), m).data, m, fill=np.nan)
        np.testing.assert_array_equal(back[m.kept_indices], F[m.kept_indices])
        assert np.isnan(back[hard == 0]).all()

    def test_length_mismatch(self, rng):
        with pytest.raises(DimensionError):
            gather_kept(Tensor(rng.standard_normal((4, 2))), RetentionMask.from_hard(np.ones(5)))


# --- memory bank and aggregation -------------------------------------------

class TestMemoryBank:
    def test_push(self):
        b = MemoryBank(3)
        memory_push(b, np.zeros((2, 2)))
        assert len(b) == 1

    def test_fifo(self):
        b = MemoryBank(2)
        frames = [np.full((2, 2), float(i)) for i in range(3)]
        for f in frames:
            b.push(f)
        assert [f[0, 0] for f in b.frames] == [1.0, 2.0]

    def test_episode_keeps_last_z(self):
        b = MemoryBank(10)
        for t in range(20):
            b.push(np.full((3, 2), float(t)))
        assert [f[0, 0] for f in b.frames] == [float(t) for t in range(10, 20)]

    def test_shape_mismatch(self):
        b = MemoryBank(2)
        b.push(np.zeros((2, 2)))
        with pytest.raises(DimensionError):
            b.push(np.zeros((3, 2)))

    def test_order_invariant_average(self, rng):
        frames = [rng.standard_normal((4, 3)) for _ in range(5)]
        a, b = MemoryBank(5), MemoryBank(5)
        for f in frames:
            a.push(f)
        for f in frames[::-1]:
            b.push(f)
        np.testing.assert_allclose(a.average(), b.average(), atol=1e-15)


def make_mefa(dim=8, out=6, blocks=2, heads=4, seed=0):
    store = ParamStore()
    return store, Mefa(store, dim, out, init(seed), blocks=blocks, heads=heads)


class TestTemporalEncoding:
    def test_single_frame_bank(self, rng):
        store, mefa = make_mefa()
        F, prev = rng.standard_normal((5, 8)), rng.standard_normal((5, 8))
        bank = MemoryBank(4).push(prev)
        a = mefa.temporal_encoding(Tensor(F), bank).data
        b = mefa.temporal(ops.concat_cols([Tensor(F), Tensor(prev)])).data
        np.testing.assert_array_equal(a, b)

    def test_empty_bank_warm_up(self, rng):
        store, mefa = make_mefa()
        F = Tensor(rng.standard_normal((5, 8)))
        a = mefa.temporal_encoding(F, MemoryBank(3)).data
        np.testing.assert_array_equal(a, mefa.temporal(ops.concat_cols([F, F])).data)

    def test_bank_mean_loop_oracle(self, rng):
        frames = [rng.standard_normal((4, 3)) for _ in range(3)]
        bank = MemoryBank(5)
        for f in frames:
            bank.push(f)
        expected = [[sum(f[i, c] for f in frames) / 3 for c in range(3)] for i in range(4)]
        np.testing.assert_allclose(bank.average(), expected, atol=1e-12)


def qformer_block_oracle(store, name, x, kv, heads):
    p = {n: orc.params_of(store, f"{name}.attn.{n}") for n in "qkvo"}
    q = orc.layer_norm(x, *map(orc.lst, (store[f"{name}.ln_q.g"].data, store[f"{name}.ln_q.b"].data)))
    k = orc.layer_norm(kv, *map(orc.lst, (store[f"{name}.ln_kv.g"].data, store[f"{name}.ln_kv.b"].data)))
    x = orc.add(x, orc.mha(q, k, p, heads))
    h = orc.layer_norm(x, *map(orc.lst, (store[f"{name}.ln_ff.g"].data, store[f"{name}.ln_ff.b"].data)))
    h = orc.mlp(h, [orc.params_of(store, f"{name}.ff.up"), orc.params_of(store, f"{name}.ff.down")])
    return orc.add(x, h)


class TestAggregate:
    def test_single_value_token(self, rng):
        store, mefa = make_mefa(blocks=1)
        F = Tensor(rng.standard_normal((1, 8)))
        TE = mefa.temporal_encoding(F, None)
        kv = mefa.blocks[0].ln_kv(F + TE)
        v = mefa.blocks[0].attn.o(mefa.blocks[0].attn.v(kv)).data
        for _ in range(3):
            q = Tensor(rng.standard_normal((1, 8)))
            w = []
            out = mefa.blocks[0].attn(mefa.blocks[0].ln_q(q), kv, weights_out=w).data
            assert all(np.array_equal(p, [[1.0]]) for p in w)
            np.testing.assert_allclose(out, v, atol=1e-14)

    def test_zero_temporal_mlp_is_plain_cross_attention(self, rng):
        store, mefa = make_mefa()
        store["mefa.temporal.1.w"].data[:] = 0.0
        F = Tensor(rng.standard_normal((6, 8)))
        TE = mefa.temporal_encoding(F, MemoryBank(2).push(rng.standard_normal((6, 8))))
        assert np.all(TE.data == 0.0)
        Fk = ops.take_rows(F, [0, 3])
        a = mefa.aggregate(Fk, F, TE).data
        x = Fk
        for blk in mefa.blocks:
            x = blk(x, F)
        np.testing.assert_array_equal(a, mefa.proj(x).data)

    def test_loop_oracle_one_block(self, rng):
        store, mefa = make_mefa(blocks=1, seed=5)
        F = rng.standard_normal((8, 8))
        Fk = F[[1, 4, 6]]
        TE = mefa.temporal_encoding(Tensor(F), MemoryBank(3).push(rng.standard_normal((8, 8))))
        out = mefa.aggregate(Tensor(Fk), Tensor(F), TE).data
        kv = orc.add(orc.lst(F), orc.lst(TE.data))
        x = qformer_block_oracle(store, "mefa.block0", orc.lst(Fk), kv, 4)
        expected = orc.linear(x, *orc.params_of(store, "mefa.proj"))
        assert out.shape == (3, 6)
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_rows_preserved_and_weights_convex(self, rng):
        store, mefa = make_mefa()
        F = Tensor(rng.standard_normal((9, 8)))
        for nv in (1, 4, 9):
            Fk = ops.take_rows(F, list(range(nv)))
            w = []
            x = Fk
            for blk in mefa.blocks:
                x = blk(x, F, w)
            assert mefa.aggregate(Fk, F, mefa.temporal_encoding(F, None)).rows == nv
            for p in w:
                assert np.all(p >= 0)
                np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_empty_queries(self, rng):
        store, mefa = make_mefa()
        F = Tensor(rng.standard_normal((4, 8)))
        with pytest.raises(EmptyInputError):
            mefa.aggregate(Tensor(np.zeros((0, 8))), F, F)

    def test_gradients(self, rng):
        store, mefa = make_mefa(seed=2)
        F = Tensor(rng.standard_normal((5, 8)))
        bank = MemoryBank(3).push(rng.standard_normal((5, 8)))
        Fk = ops.take_rows(F, [0, 2])

        def fn(*_):
            return mefa.aggregate(Fk, F, mefa.temporal_encoding(F, bank))

        rep = grad_check(fn, {n: store[n] for n in store})
        assert rep.max_error <= 1e-4, rep.errors


# --- reconstruction ---------------------------------------------------------

def make_recon(n=6, dim=8, lm=6, seed=0, scatter="replace"):
    store = ParamStore()
    return store, Reconstructor(store, n, dim, lm, init(seed), scatter=scatter)


class TestAssemble:
    def test_all_kept(self, rng):
        store, rec = make_recon()
        Fv = Tensor(rng.standard_normal((6, 6)))
        m = RetentionMask.from_hard(np.ones(6))
        out = rec.assemble_rec_input(Fv, Tensor(rng.standard_normal((6, 8))), m).data
        np.testing.assert_array_equal(out, rec.align(Fv).data)

    def test_all_pruned(self, rng):
        store, rec = make_recon()
        m = RetentionMask.from_hard(np.zeros(6))
        out = rec.assemble_rec_input(Tensor(np.zeros((0, 6))), Tensor(rng.standard_normal((6, 8))), m).data
        np.testing.assert_array_equal(out, rec.e.data)

    def test_loop_oracle(self, rng):
        store, rec = make_recon(seed=3)
        hard = np.array([1, 0, 0, 1, 1, 0], float)
        m = RetentionMask.from_hard(hard)
        Fv = rng.standard_normal((3, 6))
        F = rng.standard_normal((6, 8))
        out = rec.assemble_rec_input(Tensor(Fv), Tensor(F), m).data
        aligned = orc.mlp(orc.lst(Fv), [orc.params_of(store, "recon.align.0"),
                                        orc.params_of(store, "recon.align.1")])
        e = rec.e.data
        row_of = {j: r for r, j in enumerate(np.flatnonzero(hard))}
        for j in range(6):
            comp = aligned[row_of[j]] if hard[j] else list(F[j])
            expected = [c * hard[j] + e[j, k] * (1 - hard[j]) for k, c in enumerate(comp)]
            np.testing.assert_allclose(out[j], expected, atol=1e-12)

    def test_add_mode(self, rng):
        store, rec = make_recon(scatter="add")
        m = RetentionMask.from_hard(np.array([1, 0, 1, 0, 0, 0], float))
        Fv, F = Tensor(rng.standard_normal((2, 6))), Tensor(rng.standard_normal((6, 8)))
        out = rec.assemble_rec_input(Fv, F, m).data
        np.testing.assert_allclose(out[[0, 2]], rec.align(Fv).data + F.data[[0, 2]], atol=1e-14)
        np.testing.assert_array_equal(out[[1, 3, 4, 5]], rec.e.data[[1, 3, 4, 5]])

    def test_count_mismatch(self, rng):
        store, rec = make_recon()
        with pytest.raises(ConsistencyError):
            rec.assemble_rec_input(Tensor(rng.standard_normal((2, 6))), Tensor(np.zeros((6, 8))),
                                   RetentionMask.from_hard(np.ones(6)))


def transformer_block_oracle(store, name, x, heads):
    p = {n: orc.params_of(store, f"{name}.attn.{n}") for n in "qkvo"}
    ln = lambda t, nm: orc.layer_norm(t, orc.lst(store[f"{name}.{nm}.g"].data),
                                      orc.lst(store[f"{name}.{nm}.b"].data))
    h = ln(x, "ln1")
    x = orc.add(x, orc.mha(h, h, p, heads))
    h = orc.mlp(ln(x, "ln2"), [orc.params_of(store, f"{name}.ff.up"), orc.params_of(store, f"{name}.ff.down")])
    return orc.add(x, h)


class TestReconstruct:
    def test_zero_blocks_pass_through(self, rng):
        store, rec = make_recon()
        for n in store.names("recon.block"):
            if n.endswith((".o.w", ".o.b", ".down.w", ".down.b")):
                store[n].data[:] = 0.0
        x = Tensor(rng.standard_normal((6, 8)))
        np.testing.assert_array_equal(rec.reconstruct(x).data, rec.head(x).data)

    def test_permutation_equivariant(self, rng):
        store, rec = make_recon(seed=1)
        x = rng.standard_normal((6, 8))
        perm = rng.permutation(6)
        np.testing.assert_allclose(rec.reconstruct(Tensor(x[perm])).data,
                                   rec.reconstruct(Tensor(x)).data[perm], atol=1e-12)

    def test_loop_oracle(self, rng):
        store, rec = make_recon(seed=2)
        x = rng.standard_normal((6, 8))
        h = orc.lst(x)
        for i in range(4):
            h = transformer_block_oracle(store, f"recon.block{i}", h, 4)
        expected = orc.linear(h, *orc.params_of(store, "recon.head"))
        np.testing.assert_allclose(rec.reconstruct(Tensor(x)).data, expected, atol=1e-10)

    def test_assemble_reconstruct_gradients(self, rng):
        store, rec = make_recon(seed=4)
        logits = Tensor(rng.standard_normal((6, 2)))
        Fv = Tensor(rng.standard_normal((6, 6)))
        F = Tensor(rng.standard_normal((6, 8)))

        def fn(logits, Fv, *_):
            m = sample_mask(ops.softmax_rows(logits), 1.0, "train", RngStream(1), relaxed=True)
            rows = ops.take_rows(Fv, m.kept_indices)
            return rec.reconstruct(rec.assemble_rec_input(rows, F, m))

        named = {"logits": logits, "Fv": Fv, **{n: store[n] for n in store}}
        rep = grad_check(fn, named)
        assert rep.max_error <= 1e-4, rep.errors
