"""Training loop: momentum SGD with global gradient-norm clipping."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tokendrive.errors import NumericError
from tokendrive.harness.checkpoint import Checkpoint, save_checkpoint
from tokendrive.harness.config import RunConfig
from tokendrive.harness.data import TRAIN_BASE, VAL_BASE, SampleSource, build_source
from tokendrive.harness.model import DrivingModel
from tokendrive.numerics import ParamStore, RngStream, no_grad

CURVE_COLUMNS = ("step", "l_way", "l_prun", "l_rec", "total", "kept_ratio", "grad_norm")
PAIR_COLUMNS = ("pair", "l_rec", "l_way")


class MomentumSGD:
    def __init__(self, store: ParamStore, lr: float, momentum: float = 0.9, clip: float | None = 1.0):
        self.store, self.lr, self.momentum, self.clip = store, lr, momentum, clip
        self.velocity = {n: np.zeros_like(t.data) for n, t in store.items()}

    def step(self) -> float:
        """Apply one update from the accumulated gradients; returns the pre-clip norm."""
        grads = {n: self.store.grad(n) for n in self.store}
        with np.errstate(over="ignore", invalid="ignore"):
            norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        if not np.isfinite(norm):
            raise NumericError("non-finite gradient norm")
        scale = 1.0
        if self.clip is not None and norm > self.clip:
            scale = self.clip / norm
        for name, t in self.store.items():
            v = self.velocity[name]
            v *= self.momentum
            v += scale * grads[name]
            t.data = t.data - self.lr * v
        return norm


@dataclass
class TrainResult:
    model: DrivingModel
    curve: list[dict] = field(default_factory=list)
    val_pairs: list[tuple[float, float]] = field(default_factory=list)
    aborted: str = ""

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.model.cfg.digest(), dict(self.model.state()))


def _fmt(v) -> str:
    return str(v) if isinstance(v, (int, np.integer)) else repr(float(v))


def rows_to_csv(columns, rows, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) if not isinstance(r[c], str) else r[c] for c in columns])
    return buf.getvalue()


def curve_csv(curve: list[dict]) -> str:
    return rows_to_csv(CURVE_COLUMNS, curve)


def pairs_csv(pairs: list[tuple[float, float]]) -> str:
    return rows_to_csv(PAIR_COLUMNS, [{"pair": i, "l_rec": r, "l_way": w} for i, (r, w) in enumerate(pairs)])


def validation_pairs(model: DrivingModel, source: SampleSource, n: int) -> list[tuple[float, float]]:
    """Open-loop (l_rec, l_way) per held-out sample, using deterministic eval masks."""
    idx = np.linspace(0, len(source) - 1, min(n, len(source))).round().astype(int)
    pairs = []
    with no_grad():
        for k in idx:
            rep = model.sample_loss(source[int(k)], rng=None, train=False)
            pairs.append((rep.l_rec, rep.l_way))
    return pairs


def train(cfg: RunConfig, source: SampleSource | None = None, val_source: SampleSource | None = None,
          progress=None) -> TrainResult:
    model = DrivingModel(cfg)
    source = source if source is not None else build_source(cfg, TRAIN_BASE, cfg.train_episodes)
    opt = MomentumSGD(model.store, cfg.lr, cfg.momentum, cfg.clip)
    order = np.random.Generator(np.random.Philox(key=cfg.seed, counter=[0, 0, 0, 1]))
    gumbel = RngStream(cfg.seed).spawn(1)
    result = TrainResult(model)
    last_good = model.state()
    for t in range(cfg.steps):
        model.store.zero_grad()
        picks = order.integers(len(source), size=cfg.batch)
        try:
            reports = [model.sample_loss(source[int(k)], gumbel) for k in picks]
            total = reports[0].total_tensor
            for r in reports[1:]:
                total = total + r.total_tensor
            total = total * (1.0 / cfg.batch)
            if not np.isfinite(total.item()):
                raise NumericError(f"non-finite loss at step {t}")
            total.backward()
            norm = opt.step()
        except NumericError as exc:
            model.load_state(last_good)
            result.aborted = f"step {t}: {exc}"
            break
        last_good = model.state()
        row = {"step": t, "grad_norm": norm, "total": total.item()}
        for key in ("l_way", "l_prun", "l_rec", "kept_ratio"):
            row[key] = float(np.mean([getattr(r, key) for r in reports]))
        result.curve.append(row)
        if progress is not None and t % cfg.log_every == 0:
            progress(row)
    model.store.zero_grad()
    if cfg.val_pairs > 0:
        vs = val_source if val_source is not None else build_source(cfg, VAL_BASE, 4, noise=False)
        result.val_pairs = validation_pairs(model, vs, cfg.val_pairs)
    return result


def write_outputs(result: TrainResult, out_dir, ckpt_path=None) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"curve": out / "train_curve.csv", "pairs": out / "val_pairs.csv",
             "ckpt": Path(ckpt_path) if ckpt_path else out / "model.ckpt"}
    paths["curve"].write_text(curve_csv(result.curve), encoding="utf-8")
    paths["pairs"].write_text(pairs_csv(result.val_pairs), encoding="utf-8")
    save_checkpoint(paths["ckpt"], result.checkpoint())
    return paths
