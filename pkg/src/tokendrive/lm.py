"""Lite language model with distance-decoupled instruction attention (DDIA).

Attention sets per query j:

* instruction query: every instruction key, RoPE on both sides;
* visual query: every instruction key *without* RoPE, plus visual keys at
  strictly earlier positions with RoPE; one softmax over the union.

``mode="causal"`` is the vanilla baseline: every key at position <= j, RoPE
everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from tokendrive.errors import DimensionError, EmptyInputError
from tokendrive.numerics import (
    MLP, FeedForward, Initializer, LayerNorm, Linear, ParamStore, Tensor, ops,
)

INSTRUCTION, VISUAL = 0, 1
ATTENTION_MODES = ("ddia", "causal")


@dataclass
class TokenStream:
    embeddings: Tensor
    segment: np.ndarray      # INSTRUCTION / VISUAL per token
    position: np.ndarray
    frame_id: np.ndarray     # -1 for instruction tokens

    @property
    def length(self) -> int:
        return len(self.segment)

    @property
    def n_instruction(self) -> int:
        return int((self.segment == INSTRUCTION).sum())

    def shifted(self, offset: int) -> "TokenStream":
        return TokenStream(self.embeddings, self.segment, self.position + offset, self.frame_id)


def build_stream(instruction: Tensor, frames: Sequence[Tensor]) -> TokenStream:
    """Instruction tokens first, then visual tokens frame by frame in time order."""
    if instruction.rows == 0:
        raise EmptyInputError("token stream needs at least one instruction token")
    parts = [instruction, *frames]
    n_vis = [f.rows for f in frames]
    segment = np.concatenate([np.full(instruction.rows, INSTRUCTION),
                              np.full(sum(n_vis), VISUAL)]).astype(np.int64)
    frame_id = np.concatenate([np.full(instruction.rows, -1)] +
                              [np.full(n, i) for i, n in enumerate(n_vis)]).astype(np.int64)
    emb = ops.concat_rows(parts) if len(parts) > 1 else instruction
    return TokenStream(emb, segment, np.arange(len(segment)), frame_id)


def attention_masks(stream: TokenStream, mode: str = "ddia") -> tuple[np.ndarray, np.ndarray]:
    """Boolean (allowed, rope) matrices indexed [query, key]."""
    seg, pos = stream.segment, stream.position
    q_instr = (seg == INSTRUCTION)[:, None]
    k_instr = (seg == INSTRUCTION)[None, :]
    earlier = pos[None, :] < pos[:, None]
    if mode == "ddia":
        instr_rows = q_instr & k_instr
        vis_rows = ~q_instr & (k_instr | earlier)
        allowed = instr_rows | vis_rows
        rope = instr_rows | (~q_instr & ~k_instr & earlier)
    elif mode == "causal":
        allowed = pos[None, :] <= pos[:, None]
        rope = allowed.copy()
    else:
        raise ValueError(f"attention mode must be one of {ATTENTION_MODES}, got '{mode}'")
    return allowed, rope


def _head_attention(q, k, v, qr, kr, allowed, rope, scale):
    # logits use rotated q/k where ``rope`` is set and raw q/k elsewhere
    s_rope = (qr @ kr.T) * scale
    if rope.all():
        logits = s_rope
    else:
        s_raw = (q @ k.T) * scale
        r = rope.astype(np.float64)
        logits = s_rope * r + s_raw * (1.0 - r)
    p = ops.softmax_rows(logits, allowed)
    return p @ v, p


def ddia_attention(q: Tensor, k: Tensor, v: Tensor, stream: TokenStream, base: float = 10000.0,
                   mode: str = "ddia") -> Tensor:
    """Single-head DDIA over one head's Q/K/V slices (L x d each)."""
    if q.cols % 2:
        raise DimensionError(f"ddia: head dim {q.cols} must be even")
    allowed, rope = attention_masks(stream, mode)
    qr = ops.rope_rows(q, stream.position, base)
    kr = ops.rope_rows(k, stream.position, base)
    out, _ = _head_attention(q, k, v, qr, kr, allowed, rope, 1.0 / np.sqrt(q.cols))
    return out


def ddia_weights(q: np.ndarray, k: np.ndarray, stream: TokenStream, base: float = 10000.0,
                 mode: str = "ddia") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(logits, allowed, weights) for one head, as plain arrays."""
    allowed, rope = attention_masks(stream, mode)
    qt, kt = Tensor(q), Tensor(k)
    qr = ops.rope_rows(qt, stream.position, base).data
    kr = ops.rope_rows(kt, stream.position, base).data
    scale = 1.0 / np.sqrt(q.shape[1])
    logits = np.where(rope, qr @ kr.T, q @ k.T) * scale
    w = ops.softmax_rows(Tensor(logits), allowed).data
    return logits, allowed, w


class DdiaBlock:
    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, init: Initializer,
                 base: float = 10000.0, mode: str = "ddia"):
        if dim % heads or (dim // heads) % 2:
            raise DimensionError(f"{name}: width {dim} / {heads} heads must give an even head dim")
        self.heads, self.head_dim, self.base, self.mode = heads, dim // heads, base, mode
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.q = Linear(store, f"{name}.q", dim, dim, init)
        self.k = Linear(store, f"{name}.k", dim, dim, init)
        self.v = Linear(store, f"{name}.v", dim, dim, init)
        self.o = Linear(store, f"{name}.o", dim, dim, init)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.ff = FeedForward(store, f"{name}.ff", dim, 4, init)

    def attention(self, x: Tensor, stream: TokenStream, weights_out: list | None = None) -> Tensor:
        h = self.ln1(x)
        q, k, v = self.q(h), self.k(h), self.v(h)
        qr = ops.rope_rows(q, stream.position, self.base, self.head_dim)
        kr = ops.rope_rows(k, stream.position, self.base, self.head_dim)
        allowed, rope = attention_masks(stream, self.mode)
        d = self.head_dim
        scale = 1.0 / np.sqrt(d)
        outs = []
        for i in range(self.heads):
            a, b = i * d, (i + 1) * d
            out, p = _head_attention(ops.col_slice(q, a, b), ops.col_slice(k, a, b),
                                     ops.col_slice(v, a, b), ops.col_slice(qr, a, b),
                                     ops.col_slice(kr, a, b), allowed, rope, scale)
            if weights_out is not None:
                weights_out.append(p.data)
            outs.append(out)
        return self.o(ops.concat_cols(outs) if len(outs) > 1 else outs[0])

    def __call__(self, x: Tensor, stream: TokenStream, weights_out: list | None = None) -> Tensor:
        x = x + self.attention(x, stream, weights_out)
        return x + self.ff(self.ln2(x))


@dataclass
class LmOutput:
    hidden: Tensor
    stream: TokenStream
    attention: list = field(default_factory=list)   # [layer][head] -> L x L weights


class LiteLM:
    def __init__(self, store: ParamStore, vocab: int, dim: int, n_waypoints: int,
                 init: Initializer, blocks: int = 4, heads: int = 4, base: float = 10000.0,
                 mode: str = "ddia", prefix: str = "lm"):
        if mode not in ATTENTION_MODES:
            raise ValueError(f"attention mode must be one of {ATTENTION_MODES}, got '{mode}'")
        self.dim, self.k, self.mode = dim, n_waypoints, mode
        self.embed = store.add(f"{prefix}.embed", init.normal((vocab, dim), 0.1))
        self.blocks = [DdiaBlock(store, f"{prefix}.block{i}", dim, heads, init, base, mode)
                       for i in range(blocks)]
        self.head_ln = LayerNorm(store, f"{prefix}.head_ln", dim)
        self.head = MLP(store, f"{prefix}.head", [dim, dim, 2 * n_waypoints], init)

    def embed_instruction(self, token_ids: Sequence[int]) -> Tensor:
        if len(token_ids) == 0:
            raise EmptyInputError("instruction must contain at least one token")
        return ops.take_rows(self.embed, list(token_ids))

    def forward(self, token_ids: Sequence[int], frames: Sequence[Tensor],
                record_attention: bool = False) -> LmOutput:
        stream = build_stream(self.embed_instruction(token_ids), frames)
        x = stream.embeddings
        maps = []
        for block in self.blocks:
            w = [] if record_attention else None
            x = block(x, stream, w)
            if record_attention:
                maps.append(w)
        return LmOutput(x, stream, maps)

    def predict_waypoints(self, hidden: Tensor, stream: TokenStream) -> Tensor:
        """Head MLP on the last visual token; returns 1 x 2K (x0, y0, x1, y1, ...)."""
        vis = np.flatnonzero(stream.segment == VISUAL)
        if len(vis) == 0:
            raise EmptyInputError("waypoint readout needs at least one visual token")
        last = ops.take_rows(hidden, [int(vis[-1])])
        return self.head(self.head_ln(last))


def lm_forward(params: LiteLM, F_t_ids: Sequence[int], frames: Sequence[Tensor]) -> Tensor:
    return params.forward(F_t_ids, frames).hidden


def to_waypoints(flat: Tensor | np.ndarray) -> np.ndarray:
    arr = flat.data if isinstance(flat, Tensor) else np.asarray(flat)
    return arr.reshape(-1, 2)
