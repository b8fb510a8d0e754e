"""Per-token keep/drop scoring and straight-through mask sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tokendrive.errors import ConfigError, DimensionError
from tokendrive.numerics import MLP, Initializer, ParamStore, RngStream, Tensor, gumbel_softmax, ops

KEEP = 1  # column of the score matrix holding the keep probability


@dataclass
class RetentionMask:
    hard: np.ndarray            # (N,) 0/1 decisions
    soft: np.ndarray            # (N,) keep probabilities behind the gradient
    kept_indices: np.ndarray    # ascending
    st: Tensor                  # (N, 1) hard values; gradient of the soft path in training

    @property
    def n(self) -> int:
        return len(self.hard)

    @property
    def n_kept(self) -> int:
        return len(self.kept_indices)

    @property
    def kept_ratio(self) -> float:
        return self.n_kept / self.n

    @classmethod
    def from_hard(cls, hard) -> "RetentionMask":
        """Constant mask (no gradient path), mostly for tests and pooling baselines."""
        hard = np.asarray(hard, dtype=np.float64)
        return cls(hard=hard, soft=hard.copy(), kept_indices=np.flatnonzero(hard),
                   st=Tensor(hard.reshape(-1, 1)))


class Sparsifier:
    """Local projection plus a decision MLP over ``[global; local]`` features."""

    def __init__(self, store: ParamStore, dim: int, init: Initializer, prefix: str = "sparsify"):
        if dim % 2:
            raise ConfigError(f"sparsifier: feature width {dim} must be even")
        self.dim = dim
        self.local = MLP(store, f"{prefix}.local", [dim, dim // 2], init)
        self.decision = MLP(store, f"{prefix}.decision", [dim, max(1, dim // 4), 2], init)

    def logits(self, F: Tensor) -> Tensor:
        if F.cols != self.dim:
            raise DimensionError(f"sparsifier: features have width {F.cols}, expected {self.dim}")
        L = self.local(F)
        G = ops.avg_rows(L)
        ones = np.ones((F.rows, 1))
        GL = ops.concat_cols([ops.matmul(Tensor(ones), G), L])
        return self.decision(GL)

    def score_tokens(self, F: Tensor) -> Tensor:
        """Keep/drop probabilities S (N x 2); column 1 is the keep class."""
        return ops.softmax_rows(self.logits(F))

    def __call__(self, F: Tensor, tau: float, mode: str, rng: RngStream | None,
                 deterministic: bool = False, relaxed: bool = False) -> tuple[Tensor, RetentionMask]:
        z = self.logits(F)
        S = ops.softmax_rows(z)
        m = sample_mask(S, tau, mode, rng, log_s=ops.log_softmax_rows(z),
                        deterministic=deterministic, relaxed=relaxed)
        return S, m


def sample_mask(S: Tensor, tau: float, mode: str, rng: RngStream | None,
                log_s: Tensor | None = None, deterministic: bool = False,
                relaxed: bool = False) -> RetentionMask:
    """Binary retention mask from keep/drop probabilities.

    ``train`` draws a straight-through Gumbel-Softmax sample with log S as
    logits; ``eval`` keeps token j iff S[j,1] >= S[j,0]. If nothing survives,
    the token with the highest keep probability is kept.

    ``relaxed`` makes ``st`` carry the soft keep probabilities in the forward
    pass too (same gradient), which is what finite-difference checks need.
    """
    if mode == "train":
        logits = log_s if log_s is not None else ops.log(S)
        g = gumbel_softmax(logits, tau, hard=True, rng=rng, deterministic=deterministic)
        soft_col = ops.col_slice(g.soft, KEEP, KEEP + 1)
        hard = g.hard[:, KEEP].copy()
    elif mode == "eval":
        soft_col = ops.col_slice(S, KEEP, KEEP + 1)
        hard = (S.data[:, KEEP] >= S.data[:, 1 - KEEP]).astype(np.float64)
    else:
        raise ValueError(f"unknown mask mode '{mode}'")
    soft = soft_col.data[:, 0].copy()
    if hard.sum() == 0:
        hard[int(np.argmax(soft))] = 1.0
    if relaxed:
        st = soft_col
    elif mode == "train":
        st = ops.straight_through(hard.reshape(-1, 1), soft_col)
    else:
        st = Tensor(hard.reshape(-1, 1))
    return RetentionMask(hard=hard, soft=soft, kept_indices=np.flatnonzero(hard), st=st)


def gather_kept(F: Tensor, mask: RetentionMask) -> Tensor:
    """Rows of F at the kept positions, scaled by the (unit-valued) mask entries."""
    if mask.n != F.rows:
        raise DimensionError(f"gather_kept: mask length {mask.n} for {F.rows} tokens")
    idx = mask.kept_indices
    return ops.take_rows(F, idx) * ops.take_rows(mask.st, idx)


def scatter_rows_back(rows: np.ndarray, mask: RetentionMask, fill: float = 0.0) -> np.ndarray:
    """Inverse of :func:`gather_kept` on plain arrays; pruned rows get ``fill``."""
    out = np.full((mask.n, rows.shape[1]), fill)
    out[mask.kept_indices] = rows
    return out
