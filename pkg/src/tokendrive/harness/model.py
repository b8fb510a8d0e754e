"""Full driving pipeline: sparsify -> temporal encoding -> aggregation -> LM -> waypoints."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from tokendrive.instructions import VOCAB_SIZE
from tokendrive.lm import LiteLM, LmOutput, to_waypoints
from tokendrive.losses import FrameLoss, LossReport, LossWeights, prune_ratio_loss, rec_loss, total_loss, waypoint_loss
from tokendrive.mefa import MemoryBank, Mefa
from tokendrive.numerics import Initializer, ParamStore, RngStream, Tensor, no_grad, ops
from tokendrive.reconstruct import Reconstructor
from tokendrive.sparsify import RetentionMask, Sparsifier, gather_kept

from tokendrive.harness.config import RunConfig


@dataclass
class Sample:
    frames: list[np.ndarray]             # raw N x C features, oldest first
    banks: list[np.ndarray | None]       # memory-bank average seen by each frame
    instruction: list[int]
    target: np.ndarray                   # K x 2 ego-frame waypoints


@dataclass
class FrameOut:
    tokens: Tensor                       # N_v x C_t visual tokens for the LM
    mask: RetentionMask | None
    loss: FrameLoss


class DrivingModel:
    def __init__(self, cfg: RunConfig, init_seed: int | None = None):
        self.cfg = cfg
        self.store = ParamStore()
        seed = cfg.seed if init_seed is None else init_seed
        init = Initializer(RngStream(seed).spawn(0))
        c = cfg
        self.sparsifier = Sparsifier(self.store, c.dim, init) if c.reduction != "pooling" else None
        self.mefa = Mefa(self.store, c.dim, c.lm_dim, init, blocks=c.mefa_blocks, heads=c.heads)
        self.recon = (Reconstructor(self.store, c.n_tokens, c.dim, c.lm_dim, init, blocks=c.recon_blocks,
                                    heads=c.heads, scatter=c.scatter, head_std=0.01 * c.feature_scale)
                      if c.reduction == "ccdp" else None)
        self.lm = LiteLM(self.store, VOCAB_SIZE, c.lm_dim, c.waypoints, init, blocks=c.lm_blocks,
                         heads=c.heads, base=c.rope_base, mode="ddia" if c.ddia == "on" else "causal")
        self.pool_groups = np.array_split(np.arange(c.n_tokens), c.kept_target)

    @property
    def loss_weights(self) -> LossWeights:
        lambda2 = self.cfg.lambda2 if self.recon is not None else 0.0
        lambda1 = self.cfg.lambda1 if self.sparsifier is not None else 0.0
        return LossWeights(lambda1, lambda2, self.cfg.ratio)

    def frame_tokens(self, F: np.ndarray, bank_avg: np.ndarray | None, train: bool,
                     rng: RngStream | None = None, losses: bool | None = None,
                     relaxed: bool = False) -> FrameOut:
        """Visual tokens of one frame; ``losses`` (default: ``train``) adds the pruning terms.

        The connector works on per-token layer-normalised features, so its
        conditioning does not depend on the encoder's output scale. The
        reconstruction target stays the raw frame. ``relaxed`` swaps the
        straight-through mask for its soft values (gradient checks only).
        """
        losses = train if losses is None else losses
        F_raw = Tensor(F)
        Ft = ops.layer_norm(F_raw)
        bank = None if bank_avg is None else ops.layer_norm(Tensor(bank_avg)).data
        TE = self.mefa.temporal_encoding(Ft, bank)
        if self.sparsifier is None:
            Fk = ops.concat_rows([ops.avg_rows(ops.take_rows(Ft, g)) for g in self.pool_groups])
            Fv = self.mefa.aggregate(Fk, Ft, TE)
            return FrameOut(Fv, None, FrameLoss(kept_ratio=len(self.pool_groups) / self.cfg.n_tokens))
        _, mask = self.sparsifier(Ft, self.cfg.tau, "train" if train else "eval", rng,
                                  relaxed=relaxed)
        Fv = self.mefa.aggregate(gather_kept(Ft, mask), Ft, TE)
        loss = FrameLoss(kept_ratio=mask.kept_ratio)
        if losses:
            loss.l_prun = prune_ratio_loss(mask, self.cfg.ratio)
            if self.recon is not None and self.cfg.lambda2 > 0:
                F_hat = self.recon.reconstruct(self.recon.assemble_rec_input(Fv, F_raw, mask))
                loss.l_rec = rec_loss(F_raw, F_hat, mask)
        return FrameOut(Fv, mask, loss)

    def predict(self, instruction: Sequence[int], tokens: Sequence[Tensor],
                record_attention: bool = False) -> tuple[Tensor, LmOutput]:
        out = self.lm.forward(instruction, tokens, record_attention=record_attention)
        return self.lm.predict_waypoints(out.hidden, out.stream), out

    def sample_loss(self, sample: Sample, rng: RngStream | None, train: bool = True,
                    relaxed: bool = False) -> LossReport:
        outs = [self.frame_tokens(F, b, train, rng, losses=True, relaxed=relaxed)
                for F, b in zip(sample.frames, sample.banks)]
        pred, _ = self.predict(sample.instruction, [o.tokens for o in outs])
        return total_loss(waypoint_loss(pred, sample.target), [o.loss for o in outs], self.loss_weights)

    def state(self):
        return self.store.state()

    def load_state(self, state) -> None:
        self.store.load_state(state)


class ModelAgent:
    """Closed-loop agent: one memory bank and visual-token history per episode."""

    def __init__(self, model: DrivingModel):
        self.model = model
        self.bank = MemoryBank(model.cfg.capacity)
        self.history: deque[Tensor] = deque(maxlen=model.cfg.frames)
        self.last: LmOutput | None = None
        self.record_attention = False

    def reset(self, scenario=None) -> None:
        self.bank.reset()
        self.history.clear()
        self.last = None

    def __call__(self, obs) -> np.ndarray:
        with no_grad():
            F = np.asarray(obs.features, dtype=np.float64)
            out = self.model.frame_tokens(F, self.bank.average(), train=False)
            self.bank.push(F)
            self.history.append(out.tokens)
            pred, self.last = self.model.predict(obs.instruction, list(self.history),
                                                 record_attention=self.record_attention)
        return to_waypoints(pred)
