"""Training-only reconstruction of pruned tokens from the aggregated kept tokens."""
from __future__ import annotations

import numpy as np

from tokendrive.errors import ConsistencyError, DimensionError
from tokendrive.numerics import (
    MLP, FeedForward, Initializer, LayerNorm, Linear, MultiHeadAttention, ParamStore, Tensor, ops,
)
from tokendrive.sparsify import RetentionMask

SCATTER_MODES = ("replace", "add")


class SelfAttentionBlock:
    """Pre-norm bidirectional self-attention block without positional encoding."""

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, init: Initializer):
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.attn = MultiHeadAttention(store, f"{name}.attn", dim, heads, init)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.ff = FeedForward(store, f"{name}.ff", dim, 4, init)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h)
        return x + self.ff(self.ln2(x))


class Reconstructor:
    def __init__(self, store: ParamStore, n_tokens: int, dim: int, lm_dim: int,
                 init: Initializer, blocks: int = 4, heads: int = 4,
                 scatter: str = "replace", prefix: str = "recon", head_std: float | None = None):
        if scatter not in SCATTER_MODES:
            raise ValueError(f"scatter mode must be one of {SCATTER_MODES}, got '{scatter}'")
        self.n, self.dim, self.scatter = n_tokens, dim, scatter
        self.align = MLP(store, f"{prefix}.align", [lm_dim, dim, dim], init)
        self.e = store.add(f"{prefix}.e", init.normal((n_tokens, dim), 0.02))
        self.blocks = [SelfAttentionBlock(store, f"{prefix}.block{i}", dim, heads, init)
                       for i in range(blocks)]
        # a small head_std starts F_hat near zero, keeping early L_rec on the scale of |F|^2
        self.head = Linear(store, f"{prefix}.head", dim, dim, init, std=head_std)

    def assemble_rec_input(self, Fv: Tensor, F: Tensor, mask: RetentionMask) -> Tensor:
        """Scatter aligned kept tokens into F, then blend with the learnable embedding.

        Row j is ``composite_j * M_j + e_j * (1 - M_j)`` where the composite
        holds the aligned enhanced token at kept positions (replacing, or
        added to, F_j) and F_j elsewhere.
        """
        if mask.n_kept != Fv.rows:
            raise ConsistencyError(f"mask keeps {mask.n_kept} tokens but {Fv.rows} enhanced rows given")
        if F.shape != (self.n, self.dim) or mask.n != self.n:
            raise DimensionError(f"reconstructor expects {self.n}x{self.dim} frames, got {F.shape}")
        idx = mask.kept_indices
        aligned = ops.scatter_rows(self.n, idx, self.align(Fv))
        if self.scatter == "replace":
            keep_rows = np.zeros((self.n, 1))
            keep_rows[idx] = 1.0
            base = Tensor(F.data * (1.0 - keep_rows))
        else:
            base = Tensor(F.data)
        composite = aligned + base
        M = mask.st
        return composite * M + self.e * (1.0 - M)

    def reconstruct(self, F_rec: Tensor) -> Tensor:
        if F_rec.shape != (self.n, self.dim):
            raise DimensionError(f"reconstruct: expected {self.n}x{self.dim}, got {F_rec.shape}")
        x = F_rec
        for block in self.blocks:
            x = block(x)
        return self.head(x)


def assemble_rec_input(Fv: Tensor, F: Tensor, mask: RetentionMask, params: Reconstructor) -> Tensor:
    return params.assemble_rec_input(Fv, F, mask)


def reconstruct(params: Reconstructor, F_rec: Tensor) -> Tensor:
    return params.reconstruct(F_rec)
