"""Layers built on the autodiff ops: linear maps, MLPs, norms, attention."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tokendrive.errors import DimensionError, ParameterError
from tokendrive.numerics import autograd as ag
from tokendrive.numerics.autograd import Tensor
from tokendrive.numerics.params import Initializer, ParamStore
from tokendrive.numerics.rng import RngStream


class Linear:
    def __init__(self, store: ParamStore, name: str, fan_in: int, fan_out: int,
                 init: Initializer, bias: bool = True, std: float | None = None):
        self.name = name
        self.fan_in, self.fan_out = fan_in, fan_out
        w = init.fan_in(fan_in, fan_out) if std is None else init.normal((fan_in, fan_out), std)
        self.w = store.add(f"{name}.w", w)
        self.b = store.add(f"{name}.b", np.zeros((1, fan_out))) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        if x.cols != self.w.rows:
            raise DimensionError(f"{self.name}: input width {x.cols} != expected {self.w.rows}")
        y = x @ self.w
        return y if self.b is None else y + self.b


def mlp_apply(store: ParamStore, prefix: str, x: Tensor, widths: Sequence[int]) -> Tensor:
    """Apply the MLP stored under ``prefix`` with layer sizes ``widths``.

    GELU sits between layers; the last layer is linear.
    """
    if len(widths) < 2:
        raise DimensionError(f"{prefix}: an MLP needs at least two widths, got {list(widths)}")
    h = x
    n_layers = len(widths) - 1
    for i in range(n_layers):
        name = f"{prefix}.{i}"
        if f"{name}.w" not in store:
            raise ParameterError(f"{name}: no weights in store")
        w, b = store[f"{name}.w"], store[f"{name}.b"]
        if w.shape != (widths[i], widths[i + 1]):
            raise DimensionError(f"{name}: stored weight {w.shape} does not match widths "
                                 f"{widths[i]}->{widths[i + 1]}")
        if h.cols != widths[i]:
            raise DimensionError(f"{name}: input width {h.cols} != {widths[i]}")
        h = h @ w + b
        if i < n_layers - 1:
            h = ag.gelu(h)
    return h


class MLP:
    def __init__(self, store: ParamStore, prefix: str, widths: Sequence[int], init: Initializer):
        self.store, self.prefix, self.widths = store, prefix, list(widths)
        self.layers = [Linear(store, f"{prefix}.{i}", widths[i], widths[i + 1], init)
                       for i in range(len(widths) - 1)]

    def __call__(self, x: Tensor) -> Tensor:
        return mlp_apply(self.store, self.prefix, x, self.widths)


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int, eps: float = 1e-5):
        self.g = store.add(f"{name}.g", np.ones((1, dim)))
        self.b = store.add(f"{name}.b", np.zeros((1, dim)))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.eps) * self.g + self.b


class FeedForward:
    def __init__(self, store: ParamStore, name: str, dim: int, expansion: int, init: Initializer):
        self.up = Linear(store, f"{name}.up", dim, expansion * dim, init)
        self.down = Linear(store, f"{name}.down", expansion * dim, dim, init)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(ag.gelu(self.up(x)))


def attend_heads(q: Tensor, k: Tensor, v: Tensor, heads: int, allowed: np.ndarray | None = None,
                 weights_out: list | None = None) -> Tensor:
    """Scaled dot-product attention per head over column blocks; heads re-concatenated."""
    dim = q.cols
    if dim % heads:
        raise DimensionError(f"width {dim} not divisible by {heads} heads")
    d = dim // heads
    scale = 1.0 / np.sqrt(d)
    outs = []
    for h in range(heads):
        sl = slice(h * d, (h + 1) * d)
        qh, kh, vh = (ag.col_slice(t, sl.start, sl.stop) for t in (q, k, v))
        p = ag.softmax_rows((qh @ kh.T) * scale, allowed)
        if weights_out is not None:
            weights_out.append(p.data)
        outs.append(p @ vh)
    return outs[0] if heads == 1 else ag.concat_cols(outs)


class MultiHeadAttention:
    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, init: Initializer):
        if dim % heads:
            raise DimensionError(f"{name}: width {dim} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(store, f"{name}.q", dim, dim, init)
        self.k = Linear(store, f"{name}.k", dim, dim, init)
        self.v = Linear(store, f"{name}.v", dim, dim, init)
        self.o = Linear(store, f"{name}.o", dim, dim, init)

    def __call__(self, xq: Tensor, xkv: Tensor, allowed: np.ndarray | None = None,
                 weights_out: list | None = None) -> Tensor:
        out = attend_heads(self.q(xq), self.k(xkv), self.v(xkv), self.heads, allowed, weights_out)
        return self.o(out)


# --- sampling and positional primitives ----------------------------------

@dataclass
class GumbelSample:
    soft: Tensor          # (N, 2) relaxed sample, rows sum to 1
    hard: np.ndarray      # (N, 2) one-hot argmax of ``soft``
    st: Tensor | None     # hard values forward, soft gradient backward (when hard=True)


def gumbel_softmax(logits: Tensor, tau: float, hard: bool, rng: RngStream | None,
                   deterministic: bool = False) -> GumbelSample:
    """Gumbel-Softmax over rows; ``deterministic`` forces the noise to zero."""
    if not tau > 0:
        raise ParameterError(f"gumbel_softmax: tau must be positive, got {tau}")
    if deterministic or rng is None:
        if not deterministic:
            raise ParameterError("gumbel_softmax: an RngStream is required unless deterministic")
        noise = np.zeros(logits.shape)
    else:
        noise = rng.gumbel(logits.shape)
    soft = ag.softmax_rows((logits + noise) * (1.0 / tau))
    one_hot = np.zeros(logits.shape)
    one_hot[np.arange(logits.rows), soft.data.argmax(axis=1)] = 1.0
    st = ag.straight_through(one_hot, soft) if hard else None
    return GumbelSample(soft=soft, hard=one_hot, st=st)


def rope_rotate(x: Tensor, position: int, base: float = 10000.0) -> Tensor:
    """Rotary rotation of a single 1 x d row at integer ``position``."""
    x = ag.as_tensor(x)
    if x.cols % 2:
        raise DimensionError(f"rope_rotate: width {x.cols} must be even")
    if position < 0:
        raise ParameterError(f"rope_rotate: position must be >= 0, got {position}")
    return ag.rope_rows(x, np.full(x.rows, position), base)
