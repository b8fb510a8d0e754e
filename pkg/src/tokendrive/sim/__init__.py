"""Deterministic 2D driving world used for closed-loop evaluation."""
from tokendrive.sim.control import PidGains, PIDController, pid_control, target_speed
from tokendrive.sim.encoder import FrameEncoder, encode_frame, mirror_observation, observation
from tokendrive.sim.metrics import (
    DEFAULT_PENALTIES, INFRACTION_CODES, DriveLog, Metrics, StepRecord, compute_metrics,
    infraction_score,
)
from tokendrive.sim.scenario import TIERS, Obstacle, Scenario, ScenarioConfig, Segment, generate_scenario
from tokendrive.sim.world import (
    ConstantAgent, EgoState, Observation, OracleAgent, SimConfig, WorldState, observe,
    oracle_waypoints, run_episode, start_state, step, wrap_angle,
)

__all__ = [
    "ConstantAgent", "DEFAULT_PENALTIES", "DriveLog", "EgoState", "FrameEncoder", "INFRACTION_CODES",
    "Metrics", "Observation", "Obstacle", "OracleAgent", "PIDController", "PidGains", "Scenario",
    "ScenarioConfig", "Segment", "SimConfig", "StepRecord", "TIERS", "WorldState", "compute_metrics",
    "encode_frame", "generate_scenario", "infraction_score", "mirror_observation", "observation",
    "observe", "oracle_waypoints", "pid_control", "run_episode", "start_state", "step",
    "target_speed", "wrap_angle",
]
