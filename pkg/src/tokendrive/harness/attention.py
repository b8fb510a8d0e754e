"""Export LM attention maps recorded during a closed-loop episode."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from tokendrive.errors import ConfigError
from tokendrive.harness.config import RunConfig
from tokendrive.harness.data import make_encoder, scenario_config
from tokendrive.harness.model import DrivingModel, ModelAgent
from tokendrive.harness.train import rows_to_csv
from tokendrive.lm import INSTRUCTION
from tokendrive.sim import generate_scenario, run_episode

MAP_COLUMNS = ("step", "query", "key", "query_segment", "key_segment", "query_frame", "key_frame", "weight")
MASS_COLUMNS = ("step", "query", "visual_index", "query_frame", "instruction_mass")


def _segment_names(segment: np.ndarray) -> list[str]:
    return ["instruction" if s == INSTRUCTION else "visual" for s in segment]


@dataclass
class AttentionDump:
    seed: int
    layer: int
    head: int
    maps: list[tuple[int, np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)
    # (step, weights L x L, segment, frame_id)

    def map_rows(self) -> list[dict]:
        rows = []
        for step, w, seg, frame in self.maps:
            names = _segment_names(seg)
            for q in range(w.shape[0]):
                for k in range(w.shape[1]):
                    rows.append({"step": step, "query": q, "key": k, "query_segment": names[q],
                                 "key_segment": names[k], "query_frame": int(frame[q]),
                                 "key_frame": int(frame[k]), "weight": float(w[q, k])})
        return rows

    def mass_rows(self) -> list[dict]:
        """Attention mass each visual query puts on the whole instruction segment."""
        rows = []
        for step, w, seg, frame in self.maps:
            instr = seg == INSTRUCTION
            for j, q in enumerate(np.flatnonzero(~instr)):
                rows.append({"step": step, "query": int(q), "visual_index": j, "query_frame": int(frame[q]),
                             "instruction_mass": float(w[q, instr].sum())})
        return rows

    def header(self) -> str:
        return f"seed: {self.seed} layer: {self.layer} head: {self.head}"

    def maps_csv(self) -> str:
        return rows_to_csv(MAP_COLUMNS, self.map_rows(), header_comment=self.header())

    def mass_csv(self) -> str:
        return rows_to_csv(MASS_COLUMNS, self.mass_rows(), header_comment=self.header())


def dump_attention(model: DrivingModel, seed: int, layer: int, head: int, tier: str | None = None,
                   max_steps: int | None = None) -> AttentionDump:
    cfg: RunConfig = model.cfg
    if not 0 <= layer < cfg.lm_blocks:
        raise ConfigError(f"layer {layer} out of range: the LM has {cfg.lm_blocks} layers")
    if not 0 <= head < cfg.heads:
        raise ConfigError(f"head {head} out of range: the LM has {cfg.heads} heads")
    agent = ModelAgent(model)
    agent.record_attention = True
    dump = AttentionDump(seed, layer, head)
    scen = generate_scenario(seed, scenario_config(cfg, tier))

    def on_step(obs, _waypoints):
        if max_steps is not None and len(dump.maps) >= max_steps:
            return
        out = agent.last
        dump.maps.append((obs.step, out.attention[layer][head], out.stream.segment, out.stream.frame_id))

    run_episode(agent, scen, make_encoder(cfg), on_step=on_step)
    return dump


def write_attention(dump: AttentionDump, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"attn_seed{dump.seed}_l{dump.layer}_h{dump.head}"
    paths = {"maps": out / f"{stem}.csv", "mass": out / f"{stem}_instruction_mass.csv"}
    paths["maps"].write_text(dump.maps_csv(), encoding="utf-8")
    paths["mass"].write_text(dump.mass_csv(), encoding="utf-8")
    return paths
