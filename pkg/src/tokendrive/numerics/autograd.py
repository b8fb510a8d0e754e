"""Minimal reverse-mode autodiff over rank-2 float64 arrays.

Every op returns a :class:`Tensor`; when any input requires a gradient the
op records a backward closure mapping the upstream gradient to one gradient
per parent. ``Tensor.backward`` walks the recorded graph in reverse
topological order.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from tokendrive.errors import DimensionError, EmptyInputError, NumericError

_GRAD_ENABLED = True
_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise DimensionError(f"Tensor must be rank 2, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NumericError(f"non-finite values produced by op '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# --- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = as_tensor(a)
        c = float(b)
        return _result(a.data * c, (a,), lambda g: (g * c,), "scale")
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    sa, sb = a.shape, b.shape
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, sa), _unbroadcast(g * ad, sb)), "mul")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _result(y, (a,), lambda g: (g * y,), "exp")


def log(a: Tensor) -> Tensor:
    x = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x)
    return _result(y, (a,), lambda g: (g / x,), "log")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def square(a: Tensor) -> Tensor:
    x = a.data
    return _result(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def abs_(a: Tensor) -> Tensor:
    x = a.data
    return _result(np.abs(x), (a,), lambda g: (g * np.sign(x),), "abs")


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT_2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _result(x * cdf, (a,), backward, "gelu")


# --- linear algebra and reductions ---------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def transpose(a: Tensor) -> Tensor:
    return _result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape
    return _result(np.array([[a.data.sum()]]), (a,),
                   lambda g: (np.full(shape, g[0, 0]),), "sum")


def mean_all(a: Tensor) -> Tensor:
    shape = a.shape
    n = a.data.size
    return _result(np.array([[a.data.mean()]]), (a,),
                   lambda g: (np.full(shape, g[0, 0] / n),), "mean")


def sum_cols(a: Tensor) -> Tensor:
    """Row-wise sum over channels: (n, c) -> (n, 1)."""
    shape = a.shape
    return _result(a.data.sum(axis=1, keepdims=True), (a,),
                   lambda g: (np.broadcast_to(g, shape).copy(),), "sum_cols")


def avg_rows(a: Tensor) -> Tensor:
    """Column-wise mean over rows: (n, c) -> (1, c)."""
    a = as_tensor(a)
    n = a.rows
    if n == 0:
        raise EmptyInputError("avg_rows: input has zero rows")
    shape = a.shape
    return _result(a.data.mean(axis=0, keepdims=True), (a,),
                   lambda g: (np.broadcast_to(g / n, shape).copy(),), "avg_rows")


# --- normalisation -------------------------------------------------------

def softmax_rows(a: Tensor, allowed: np.ndarray | None = None) -> Tensor:
    """Row softmax. Entries where ``allowed`` is False get exactly zero weight."""
    x = a.data
    if allowed is None:
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
    else:
        if not allowed.any(axis=1).all():
            raise EmptyInputError("softmax_rows: a row has no allowed entries")
        z = np.where(allowed, x, -np.inf)
        z = z - z.max(axis=1, keepdims=True)
        e = np.where(allowed, np.exp(np.where(allowed, z, 0.0)), 0.0)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result(y, (a,), backward, "softmax")


def log_softmax_rows(a: Tensor) -> Tensor:
    x = a.data
    z = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return _result(y, (a,), backward, "log_softmax")


def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardisation (no affine part)."""
    x = a.data
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def backward(g):
        gm = g.mean(axis=1, keepdims=True)
        gy = (g * y).mean(axis=1, keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _result(y, (a,), backward, "layer_norm")


# --- structural ----------------------------------------------------------

def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=1), parts, backward, "concat_cols")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    cols = {p.cols for p in parts}
    if len(cols) != 1:
        raise DimensionError(f"concat_rows: column counts differ {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result(np.concatenate([p.data for p in parts], axis=0), parts, backward, "concat_rows")


def col_slice(a: Tensor, start: int, stop: int) -> Tensor:
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _result(a.data[:, start:stop].copy(), (a,), backward, "col_slice")


def take_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx].copy(), (a,), backward, "take_rows")


def scatter_rows(n: int, idx, rows: Tensor) -> Tensor:
    """Place ``rows`` at positions ``idx`` of an ``n``-row zero matrix."""
    idx = np.asarray(idx, dtype=np.intp)
    if len(idx) != rows.rows:
        raise DimensionError(f"scatter_rows: {len(idx)} indices for {rows.rows} rows")
    if len(np.unique(idx)) != len(idx):
        raise DimensionError("scatter_rows: duplicate indices")
    out = np.zeros((n, rows.cols))
    out[idx] = rows.data
    return _result(out, (rows,), lambda g: (g[idx].copy(),), "scatter_rows")


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward value ``hard``; gradient passes to ``soft`` unchanged."""
    hard = np.asarray(hard, dtype=np.float64).reshape(soft.shape)
    return _result(hard.copy(), (soft,), lambda g: (g,), "straight_through")


def rope_rows(a: Tensor, positions, base: float = 10000.0, head_dim: int | None = None) -> Tensor:
    """Rotate channel pairs (2t, 2t+1) of row r by ``positions[r] * base**(-2t/d)``.

    With ``head_dim`` set, the frequency pattern restarts for every head-sized
    column block.
    """
    x = a.data
    d = head_dim or a.cols
    if d % 2 or a.cols % d:
        raise DimensionError(f"rope: head dim {d} must be even and divide width {a.cols}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 1)
    if pos.shape[0] != a.rows:
        raise DimensionError(f"rope: {pos.shape[0]} positions for {a.rows} rows")
    inv_freq = base ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    inv_freq = np.tile(inv_freq, a.cols // d)
    ang = pos * inv_freq
    cos, sin = np.cos(ang), np.sin(ang)
    xe, xo = x[:, 0::2], x[:, 1::2]
    y = np.empty_like(x)
    y[:, 0::2] = xe * cos - xo * sin
    y[:, 1::2] = xe * sin + xo * cos

    def backward(g):
        ge, go = g[:, 0::2], g[:, 1::2]
        out = np.empty_like(g)
        out[:, 0::2] = ge * cos + go * sin
        out[:, 1::2] = -ge * sin + go * cos
        return (out,)

    return _result(y, (a,), backward, "rope")
