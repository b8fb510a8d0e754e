"""Closed-loop evaluation over held-out scenario seeds."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tokendrive.errors import ConfigError
from tokendrive.harness.checkpoint import Checkpoint, load_checkpoint
from tokendrive.harness.config import RunConfig
from tokendrive.harness.data import EVAL_BASE, make_encoder, scenario_config
from tokendrive.harness.model import DrivingModel, ModelAgent
from tokendrive.harness.train import rows_to_csv
from tokendrive.sim import EgoState, OracleAgent, SimConfig, compute_metrics, generate_scenario, run_episode
from tokendrive.sim.world import Agent, start_state

SEED_COLUMNS = ("run", "seed", "route_m", "status", "rc", "is", "ds", "collisions", "stop_infractions")
SUMMARY_COLUMNS = ("tier", "n_seeds", "runs", "rc_mean", "rc_std", "is_mean", "is_std", "ds_mean", "ds_std")

# Start-pose jitter per evaluation run (run 0 starts exactly on the route).
START_LATERAL_M = 0.5
START_HEADING_RAD = 0.05


@dataclass
class EvalResult:
    tier: str
    seeds: list[int]
    rows: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def seeds_csv(self) -> str:
        return rows_to_csv(SEED_COLUMNS, self.rows, header_comment=f"seeds: {' '.join(map(str, self.seeds))}")

    def summary_csv(self) -> str:
        return rows_to_csv(SUMMARY_COLUMNS, [self.summary],
                           header_comment=f"seeds: {' '.join(map(str, self.seeds))}")


def eval_seeds(n: int) -> list[int]:
    return [EVAL_BASE + i for i in range(n)]


def model_from_checkpoint(cfg: RunConfig, ckpt: Checkpoint) -> DrivingModel:
    if ckpt.digest != cfg.digest():
        raise ConfigError(f"checkpoint digest {ckpt.digest:016x} does not match config digest "
                          f"{cfg.digest():016x}")
    model = DrivingModel(cfg)
    model.load_state({k: v.astype(np.float64) for k, v in ckpt.tensors.items()})
    return model


def jittered_start(scenario, seed: int, run: int) -> EgoState:
    base = start_state(scenario)
    if run == 0:
        return base
    rng = np.random.Generator(np.random.Philox(key=seed, counter=[run, 0, 0, 2]))
    lat = float(rng.uniform(-START_LATERAL_M, START_LATERAL_M))
    dh = float(rng.uniform(-START_HEADING_RAD, START_HEADING_RAD))
    n = np.array([-np.sin(base.heading), np.cos(base.heading)])
    return EgoState(float(base.x + lat * n[0]), float(base.y + lat * n[1]), float(base.heading + dh), 0.0)


def evaluate_agent(cfg: RunConfig, agent: Agent, tier: str, n_seeds: int, runs: int | None = None,
                   sim: SimConfig | None = None) -> EvalResult:
    seeds = eval_seeds(n_seeds)
    runs = cfg.eval_runs if runs is None else runs
    encoder = make_encoder(cfg)
    scen_cfg = scenario_config(cfg, tier)
    result = EvalResult(tier, seeds)
    for run in range(runs):
        for seed in seeds:
            scen = generate_scenario(seed, scen_cfg)
            log = run_episode(agent, scen, encoder, sim, start=jittered_start(scen, seed, run))
            m = compute_metrics(log, scen, cfg.penalties)
            kinds = [k for _, k in log.events]
            result.rows.append({"run": run, "seed": seed, "route_m": scen.route_length, "status": log.status,
                                "rc": m.rc, "is": m.is_score, "ds": m.ds,
                                "collisions": kinds.count("collision"), "stop_infractions": kinds.count("stop")})
    result.summary = summarize(result.rows, tier, n_seeds, runs)
    return result


def summarize(rows: list[dict], tier: str, n_seeds: int, runs: int) -> dict:
    """Mean over seeds within each run, then mean and std of those run means."""
    out = {"tier": tier, "n_seeds": n_seeds, "runs": runs}
    for key in ("rc", "is", "ds"):
        per_run = [np.mean([r[key] for r in rows if r["run"] == k]) for k in range(runs)]
        out[f"{key}_mean"] = float(np.mean(per_run))
        out[f"{key}_std"] = float(np.std(per_run))
    return out


def evaluate(cfg: RunConfig, ckpt_path=None, tier: str | None = None, n_seeds: int | None = None,
             oracle: bool = False) -> EvalResult:
    tier = tier or cfg.tier
    n_seeds = n_seeds or cfg.n_seeds
    if oracle:
        agent: Agent = OracleAgent(cfg.waypoints, cfg.expert_speed)
    else:
        if ckpt_path is None:
            raise ConfigError("evaluation needs a checkpoint (or oracle mode)")
        agent = ModelAgent(model_from_checkpoint(cfg, load_checkpoint(ckpt_path)))
    return evaluate_agent(cfg, agent, tier, n_seeds)


def write_eval(result: EvalResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"seeds": out / f"eval_{result.tier}_seeds.csv", "summary": out / f"eval_{result.tier}.csv"}
    paths["seeds"].write_text(result.seeds_csv(), encoding="utf-8")
    paths["summary"].write_text(result.summary_csv(), encoding="utf-8")
    return paths
