"""
Train a desk-scale policy, then drive with it
=============================================

Training on oracle demonstrations (with steering noise, so the data covers
recoveries) takes about half a minute at the default 2000 steps. Pass a
smaller step count as the first argument for a quick look.
"""
import sys

import numpy as np

from tokendrive.harness.config import RunConfig
from tokendrive.harness.evaluate import evaluate_agent
from tokendrive.harness.model import DrivingModel, ModelAgent
from tokendrive.harness.train import train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
cfg = RunConfig(steps=steps)


def show(row):
    if row["step"] % max(1, steps // 10) == 0:
        print("step %5d  l_way %.3f  l_prun %.4f  l_rec %.4f  kept %.3f"
              % (row["step"], row["l_way"], row["l_prun"], row["l_rec"], row["kept_ratio"]))


result = train(cfg, progress=show)
tail = result.curve[-min(200, len(result.curve)):]
print("mean kept ratio over the tail: %.3f" % np.mean([r["kept_ratio"] for r in tail]))

for name, model in (("untrained", DrivingModel(cfg.with_overrides(seed=1))), ("trained", result.model)):
    ev = evaluate_agent(cfg, ModelAgent(model), "tiny", n_seeds=10, runs=1)
    rcs = [r["rc"] for r in ev.rows]
    print("%-9s median RC %.3f  mean DS %.3f  statuses %s"
          % (name, np.median(rcs), ev.summary["ds_mean"], [r["status"][:3] for r in ev.rows]))
