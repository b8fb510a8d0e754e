"""
Driving a route with the oracle
===============================

The oracle reads privileged route samples and hands them to the PID
controllers, which is the upper bound every learned agent is measured against.
"""
import sys
from pathlib import Path

from tokendrive.sim import (
    FrameEncoder, OracleAgent, ScenarioConfig, compute_metrics, generate_scenario, run_episode,
)

out_dir = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out_dir.mkdir(exist_ok=True)

cfg = ScenarioConfig.for_tier("tiny", obstacles=4, stop_tags=1)
scenario = generate_scenario(42, cfg)
print("route %.1f m" % scenario.route_length)
for seg in scenario.segments:
    print("  %-8s %6.1f -> %6.1f m" % (seg.kind, seg.start_s, seg.end_s))
print("stop tags at", [round(s, 1) for s in scenario.stop_tags])

log = run_episode(OracleAgent(), scenario, FrameEncoder(16, 32, seed=7))
m = compute_metrics(log, scenario)
print("status", log.status, "steps", len(log.records), "events", log.events)
print("RC %.3f  IS %.3f  DS %.3f" % (m.rc, m.is_score, m.ds))

log.write_csv(out_dir / "oracle_drive.csv")
m.write_csv(out_dir / "oracle_metrics.csv")
print("wrote", out_dir / "oracle_drive.csv")
