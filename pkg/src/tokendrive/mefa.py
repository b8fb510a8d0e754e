"""Memory bank, temporal encoding and kept-token cross-attention aggregation."""
from __future__ import annotations

from collections import deque

import numpy as np

from tokendrive.errors import DimensionError, EmptyInputError
from tokendrive.numerics import (
    MLP, FeedForward, Initializer, LayerNorm, Linear, MultiHeadAttention, ParamStore, Tensor, ops,
)


class MemoryBank:
    """FIFO of the most recent ``capacity`` raw frame features, oldest first."""

    def __init__(self, capacity: int, shape: tuple[int, int] | None = None):
        if capacity < 1:
            raise ValueError(f"memory capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.shape = shape
        self.frames: deque[np.ndarray] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.frames)

    def push(self, F) -> "MemoryBank":
        arr = np.array(F.data if isinstance(F, Tensor) else F, dtype=np.float64)
        if self.shape is None:
            self.shape = arr.shape
        if arr.shape != self.shape:
            raise DimensionError(f"memory bank holds {self.shape} frames, got {arr.shape}")
        self.frames.append(arr)
        return self

    def average(self) -> np.ndarray | None:
        if not self.frames:
            return None
        return np.mean(np.stack(self.frames), axis=0)

    def reset(self) -> None:
        self.frames.clear()


def memory_push(bank: MemoryBank, F) -> MemoryBank:
    return bank.push(F)


class QFormerBlock:
    """Pre-norm cross-attention (queries = kept tokens) followed by a feed-forward."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, init: Initializer):
        self.ln_q = LayerNorm(store, f"{name}.ln_q", dim)
        self.ln_kv = LayerNorm(store, f"{name}.ln_kv", dim)
        self.attn = MultiHeadAttention(store, f"{name}.attn", dim, heads, init)
        self.ln_ff = LayerNorm(store, f"{name}.ln_ff", dim)
        self.ff = FeedForward(store, f"{name}.ff", dim, 4, init)

    def __call__(self, x: Tensor, kv: Tensor, weights_out: list | None = None) -> Tensor:
        x = x + self.attn(self.ln_q(x), self.ln_kv(kv), weights_out=weights_out)
        return x + self.ff(self.ln_ff(x))


class Mefa:
    def __init__(self, store: ParamStore, dim: int, out_dim: int, init: Initializer,
                 blocks: int = 2, heads: int = 4, prefix: str = "mefa"):
        self.dim, self.out_dim = dim, out_dim
        self.temporal = MLP(store, f"{prefix}.temporal", [2 * dim, dim, dim], init)
        self.blocks = [QFormerBlock(store, f"{prefix}.block{i}", dim, heads, init)
                       for i in range(blocks)]
        self.proj = Linear(store, f"{prefix}.proj", dim, out_dim, init)

    def temporal_encoding(self, F: Tensor, bank: MemoryBank | np.ndarray | None) -> Tensor:
        """TE = MLP([F; mean of bank frames]); an empty bank averages to F itself."""
        if isinstance(bank, MemoryBank):
            b_avg = bank.average()
        else:
            b_avg = bank
        if b_avg is None:
            b_avg = F.data
        if b_avg.shape != F.shape:
            raise DimensionError(f"bank average {b_avg.shape} vs frame {F.shape}")
        return self.temporal(ops.concat_cols([F, Tensor(b_avg)]))

    def aggregate(self, Fk: Tensor, F: Tensor, TE: Tensor,
                  weights_out: list | None = None) -> Tensor:
        """Kept tokens query the temporally enhanced frame; returns N_v x out_dim."""
        if Fk.rows == 0:
            raise EmptyInputError("aggregate: no kept tokens to use as queries")
        kv = F + TE
        x = Fk
        for block in self.blocks:
            x = block(x, kv, weights_out)
        return self.proj(x)


def temporal_encoding(params: Mefa, F: Tensor, bank) -> Tensor:
    return params.temporal_encoding(F, bank)


def aggregate(params: Mefa, Fk: Tensor, F: Tensor, TE: Tensor) -> Tensor:
    return params.aggregate(Fk, F, TE)
