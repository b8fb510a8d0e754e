"""Ablation suites: train and evaluate one arm per grid value on shared seeds."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tokendrive.errors import ConfigError
from tokendrive.harness.config import RunConfig
from tokendrive.harness.evaluate import eval_seeds, evaluate_agent
from tokendrive.harness.model import ModelAgent
from tokendrive.harness.train import rows_to_csv, train

# suite -> (config key, arm values)
SUITES: dict[str, tuple[str, tuple]] = {
    "ratio": ("ratio", (0.05, 0.1, 0.3, 0.5)),
    "capacity": ("capacity", (5, 10, 20)),
    "reduction": ("reduction", ("pooling", "dynamic_prune", "ccdp")),
    "ddia": ("ddia", ("on", "causal")),
}

ABLATION_COLUMNS = ("suite", "arm", "key", "value", "kept_ratio", "ds_mean", "ds_std", "rc_mean", "rc_std",
                    "is_mean", "is_std")


@dataclass
class AblationResult:
    suite: str
    tier: str
    seeds: list[int]
    rows: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        return rows_to_csv(ABLATION_COLUMNS, self.rows,
                           header_comment=f"suite: {self.suite} tier: {self.tier} "
                                          f"seeds: {' '.join(map(str, self.seeds))}")


def suite_arms(suite: str) -> tuple[str, tuple]:
    if suite not in SUITES:
        raise ConfigError(f"unknown ablation suite '{suite}'; expected one of {tuple(SUITES)}")
    return SUITES[suite]


def ablate(cfg: RunConfig, suite: str, tier: str | None = None, n_seeds: int | None = None,
           progress=None) -> AblationResult:
    """Every arm trains from the same seed and is evaluated on the same scenario seeds."""
    key, values = suite_arms(suite)
    tier = tier or cfg.tier
    n_seeds = n_seeds or cfg.n_seeds
    result = AblationResult(suite, tier, eval_seeds(n_seeds))
    for i, value in enumerate(values):
        arm_cfg = cfg.with_overrides(**{key: value})
        trained = train(arm_cfg)
        ev = evaluate_agent(arm_cfg, ModelAgent(trained.model), tier, n_seeds)
        if ev.seeds != result.seeds:
            raise AssertionError("ablation arms must share evaluation seeds")
        tail = trained.curve[-min(200, len(trained.curve)):]
        kept = float(np.mean([r["kept_ratio"] for r in tail])) if tail else float("nan")
        row = {"suite": suite, "arm": i, "key": key, "value": str(value), "kept_ratio": kept}
        row.update({k: ev.summary[k] for k in ABLATION_COLUMNS[5:]})
        result.rows.append(row)
        if progress is not None:
            progress(row)
    return result


def write_ablation(result: AblationResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"ablate_{result.suite}.csv"
    path.write_text(result.to_csv(), encoding="utf-8")
    return path
