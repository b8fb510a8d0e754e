"""Finite-difference gradient suite: every differentiable primitive plus full pipelines.

Each case is a named closure over float64 inputs; :func:`run_suite` checks all
of them with :func:`tokendrive.numerics.grad_check` and returns one row per
case. The full-pipeline cases run the whole training loss (layer norm,
sparsifier, temporal encoding, aggregation, reconstruction, LM and losses)
with relaxed masks so the objective is smooth in every parameter.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from tokendrive.harness.config import RunConfig
from tokendrive.harness.model import DrivingModel, Sample
from tokendrive.instructions import VOCAB_SIZE
from tokendrive.lm import build_stream, ddia_attention
from tokendrive.numerics import (
    FeedForward, Initializer, LayerNorm, Linear, MultiHeadAttention, ParamStore, RngStream, Tensor,
    grad_check, gumbel_softmax, ops,
)


@dataclass
class CaseResult:
    name: str
    max_error: float
    passed: bool


@dataclass
class Case:
    name: str
    fn: Callable[..., Tensor]
    inputs: dict[str, Tensor]
    max_elements: int = 64


def _t(rng, *shape, positive=False) -> Tensor:
    x = rng.standard_normal(shape)
    return Tensor(np.abs(x) + 0.5 if positive else x)


def primitive_cases(seed: int = 0) -> list[Case]:
    rng = np.random.default_rng(seed)
    a, b = _t(rng, 3, 4), _t(rng, 3, 4)
    row, col = _t(rng, 1, 4), _t(rng, 3, 1)
    pos = _t(rng, 3, 4, positive=True)
    m1, m2 = _t(rng, 3, 5), _t(rng, 5, 2)
    allowed = np.tril(np.ones((3, 4), dtype=bool), k=1)
    idx = np.array([2, 0])
    cases = [
        Case("add", lambda x, y: x + y, {"a": a, "b": b}),
        Case("add_broadcast", lambda x, r, c: x + r + c, {"a": a, "row": row, "col": col}),
        Case("sub", lambda x, y: x - y, {"a": a, "b": b}),
        Case("mul", lambda x, y: x * y, {"a": a, "b": b}),
        Case("mul_broadcast", lambda x, r: x * r, {"a": a, "row": row}),
        Case("div_scalar", lambda x: x / 2.5, {"a": a}),
        Case("neg", lambda x: -x, {"a": a}),
        Case("exp", ops.exp, {"a": a}),
        Case("log", ops.log, {"pos": pos}),
        Case("tanh", ops.tanh, {"a": a}),
        Case("square", ops.square, {"a": a}),
        Case("abs", ops.abs_, {"pos": pos}),
        Case("gelu", ops.gelu, {"a": a}),
        Case("matmul", ops.matmul, {"m1": m1, "m2": m2}),
        Case("transpose", ops.transpose, {"a": a}),
        Case("sum_all", ops.sum_all, {"a": a}),
        Case("mean_all", ops.mean_all, {"a": a}),
        Case("sum_cols", ops.sum_cols, {"a": a}),
        Case("avg_rows", ops.avg_rows, {"a": a}),
        Case("softmax_rows", ops.softmax_rows, {"a": a}),
        Case("softmax_rows_masked", lambda x: ops.softmax_rows(x, allowed), {"a": a}),
        Case("log_softmax_rows", ops.log_softmax_rows, {"a": a}),
        Case("layer_norm", ops.layer_norm, {"a": a}),
        Case("concat_cols", lambda x, y: ops.concat_cols([x, y]), {"a": a, "m1": m1}),
        Case("concat_rows", lambda x, y: ops.concat_rows([x, y]), {"a": a, "row": row}),
        Case("col_slice", lambda x: ops.col_slice(x, 1, 3), {"a": a}),
        Case("take_rows", lambda x: ops.take_rows(x, idx), {"a": a}),
        Case("scatter_rows", lambda x: ops.scatter_rows(5, idx, ops.take_rows(x, [0, 1])), {"a": a}),
        Case("rope_rows", lambda x: ops.rope_rows(x, np.array([0, 3, 7]), 100.0), {"a": a}),
        Case("gumbel_softmax_relaxed",
             lambda x: gumbel_softmax(x, 0.7, hard=False, rng=RngStream(seed)).soft, {"a": _t(rng, 4, 2)}),
    ]
    cases += _layer_cases(rng)
    return cases


def _layer_cases(rng) -> list[Case]:
    init = Initializer(RngStream(int(rng.integers(1 << 31))))
    store = ParamStore()
    lin = Linear(store, "lin", 4, 3, init)
    ln = LayerNorm(store, "ln", 4)
    ff = FeedForward(store, "ff", 4, 2, init)
    mha = MultiHeadAttention(store, "mha", 4, 2, init)
    for n in store:
        store[n].data = store[n].data + 0.1 * rng.standard_normal(store[n].shape)
    x, kv = _t(rng, 3, 4), _t(rng, 5, 4)
    instr, vis = _t(rng, 2, 4), _t(rng, 3, 4)

    def params(prefix):
        return {n: store[n] for n in store.names(prefix)}

    def ddia(q, k, v):
        stream = build_stream(Tensor(np.zeros((2, 4))), [Tensor(np.zeros((3, 4)))])
        return ddia_attention(q, k, v, stream, base=100.0)

    return [
        Case("linear", lambda x_, *_: lin(x_), {"x": x, **params("lin")}),
        Case("layer_norm_affine", lambda x_, *_: ln(x_), {"x": x, **params("ln")}),
        Case("feed_forward", lambda x_, *_: ff(x_), {"x": x, **params("ff")}),
        Case("cross_attention", lambda xq, xk, *_: mha(xq, xk), {"xq": x, "xkv": kv, **params("mha")}),
        Case("ddia_attention", ddia, {"q": ops.concat_rows([instr, vis]), "k": _t(rng, 5, 4),
                                      "v": _t(rng, 5, 4)}),
    ]


# Full-pipeline arms: (reduction, ddia, scatter); the suite uses the first three
# by default and cycles beyond that.
PIPELINE_ARMS = (("ccdp", "on", "replace"), ("ccdp", "causal", "add"), ("dynamic_prune", "on", "replace"))


def pipeline_case(seed: int, arm: tuple[str, str, str]) -> Case:
    reduction, ddia, scatter = arm
    cfg = RunConfig(n_tokens=6, dim=8, lm_dim=8, heads=2, mefa_blocks=1, recon_blocks=1, lm_blocks=1,
                    waypoints=3, frames=2, capacity=3, reduction=reduction, ddia=ddia, scatter=scatter,
                    feature_scale=1.0, seed=seed, rope_base=100.0)
    model = DrivingModel(cfg)
    rng = np.random.default_rng(seed + 101)
    # perturb every parameter so zero-initialised biases do not hide errors
    for n in model.store:
        p = model.store[n]
        p.data = p.data + 0.1 * rng.standard_normal(p.shape)
    frames = [rng.standard_normal((6, 8)) for _ in range(2)]
    banks = [None, rng.standard_normal((6, 8))]
    instruction = [int(i) for i in rng.integers(VOCAB_SIZE, size=4)]
    sample = Sample(frames, banks, instruction, rng.standard_normal((3, 2)))

    def fn(*_):
        return model.sample_loss(sample, RngStream(seed), relaxed=True).total_tensor

    return Case(f"pipeline_{seed}_{reduction}_{ddia}_{scatter}", fn,
                {n: model.store[n] for n in model.store}, max_elements=0)


def straight_through_case(seed: int) -> CaseResult:
    """Hard forward values, soft backward: not finite-differenceable, so compare
    its gradient with the gradient of the soft path directly."""
    rng = np.random.default_rng(seed + 7)
    soft = _t(rng, 5, 2)
    soft.requires_grad = True
    hard = (rng.random((5, 2)) > 0.5).astype(np.float64)
    w = rng.standard_normal((5, 2))
    st = ops.straight_through(hard, soft)
    fwd_err = float(np.abs(st.data - hard).max())
    (st * Tensor(w)).backward(np.ones((5, 2)))
    bwd_err = float(np.abs(soft.grad - w).max())
    err = max(fwd_err, bwd_err)
    return CaseResult("straight_through", err, err == 0.0)


def run_suite(seed: int = 0, n_pipelines: int = 3, h: float = 1e-5, tol: float = 1e-4,
              progress: Callable[[CaseResult], None] | None = None) -> list[CaseResult]:
    cases = primitive_cases(seed)
    cases += [pipeline_case(seed + i, PIPELINE_ARMS[i % len(PIPELINE_ARMS)]) for i in range(n_pipelines)]
    results = [straight_through_case(seed)]
    if progress is not None:
        progress(results[0])
    for case in cases:
        rep = grad_check(case.fn, case.inputs, h=h, tol=tol, max_elements=case.max_elements, seed=seed)
        res = CaseResult(case.name, rep.max_error, rep.passed)
        results.append(res)
        if progress is not None:
            progress(res)
    return results
