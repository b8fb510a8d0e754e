"""Kinematic ego, linearly moving obstacles, infraction detection and the episode loop."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

import numpy as np

from tokendrive.errors import NumericError, ParameterError
from tokendrive.instructions import tokenize
from tokendrive.sim.control import PidGains, PIDController
from tokendrive.sim.encoder import FrameEncoder
from tokendrive.sim.metrics import DriveLog, StepRecord
from tokendrive.sim.scenario import Scenario


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    return float(np.pi - np.mod(np.pi - a, 2 * np.pi))


@dataclass(frozen=True)
class EgoState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    speed: float = 0.0

    def __post_init__(self):
        if self.speed < 0:
            raise ParameterError(f"ego speed must be >= 0, got {self.speed}")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    k_s: float = 1.0              # yaw rate per unit steer, rad/s
    k_a: float = 3.0              # acceleration per unit accel, m/s^2
    ego_radius: float = 1.0
    deviation_m: float = 5.0
    block_timeout: int = 100
    max_steps: int | None = None  # default scales with route length
    finish_tolerance: float = 0.0   # projection clamps to the route end once passed
    stop_speed: float = 0.3
    stop_window: float = 6.0      # metres before a tag where stopping counts
    progress_eps: float = 0.05

    def __post_init__(self):
        if self.dt <= 0:
            raise ParameterError(f"dt must be positive, got {self.dt}")
        if self.block_timeout < 1 or self.deviation_m <= 0:
            raise ParameterError("block timeout and deviation threshold must be positive")

    def step_limit(self, route_length: float) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return int(np.ceil(3.0 * route_length / (2.0 * self.dt))) + 2 * self.block_timeout


@dataclass
class WorldState:
    scenario: Scenario
    obstacle_pos: np.ndarray
    obstacle_vel: np.ndarray
    obstacle_radius: np.ndarray
    step: int = 0
    s: float = 0.0                 # current projected arc length
    lateral: float = 0.0
    max_progress: float = 0.0
    overlapping: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    stops_served: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))

    @classmethod
    def initial(cls, scenario: Scenario) -> "WorldState":
        obs = scenario.obstacles
        pos = np.array([o.position for o in obs], dtype=np.float64).reshape(-1, 2)
        vel = np.array([o.velocity for o in obs], dtype=np.float64).reshape(-1, 2)
        rad = np.array([o.radius for o in obs], dtype=np.float64)
        return cls(scenario, pos, vel, rad, overlapping=np.zeros(len(obs), bool),
                   stops_served=np.zeros(len(scenario.stop_tags), bool))

    def copy(self) -> "WorldState":
        return replace(self, obstacle_pos=self.obstacle_pos.copy(), overlapping=self.overlapping.copy(),
                       stops_served=self.stops_served.copy())


def start_state(scenario: Scenario) -> EgoState:
    t = scenario.tangent_at(0.0)
    return EgoState(float(scenario.points[0, 0]), float(scenario.points[0, 1]),
                    float(np.arctan2(t[1], t[0])), 0.0)


def step(world: WorldState, ego: EgoState, action: tuple[float, float], dt: float,
         cfg: SimConfig | None = None) -> tuple[WorldState, EgoState, list[str]]:
    """Advance one explicit-Euler step. Returns new world, new ego and infraction kinds."""
    cfg = cfg or SimConfig()
    if dt <= 0:
        raise ParameterError(f"dt must be positive, got {dt}")
    steer, accel = float(action[0]), float(action[1])
    heading = wrap_angle(ego.heading + steer * cfg.k_s * dt)
    x = ego.x + ego.speed * np.cos(heading) * dt
    y = ego.y + ego.speed * np.sin(heading) * dt
    speed = max(0.0, ego.speed + accel * cfg.k_a * dt)
    new_ego = EgoState(float(x), float(y), heading, speed)

    w = world.copy()
    w.step = world.step + 1
    w.obstacle_pos = world.obstacle_pos + world.obstacle_vel * dt
    events: list[str] = []

    if len(w.obstacle_pos):
        dist = np.linalg.norm(w.obstacle_pos - new_ego.position, axis=1)
        now = dist < w.obstacle_radius + cfg.ego_radius
        events += ["collision"] * int((now & ~world.overlapping).sum())
        w.overlapping = now

    s, lateral = w.scenario.project(new_ego.position, hint=world.s)
    for i, tag in enumerate(w.scenario.stop_tags):
        if w.stops_served[i]:
            continue
        if tag - cfg.stop_window <= s <= tag and new_ego.speed <= cfg.stop_speed:
            w.stops_served[i] = True
        elif world.s < tag <= s:
            w.stops_served[i] = True
            events.append("stop")
    w.s, w.lateral = s, lateral
    w.max_progress = max(world.max_progress, s)
    if abs(lateral) > cfg.deviation_m:
        events.append("deviation")
    return w, new_ego, events


@dataclass
class Observation:
    step: int
    features: np.ndarray        # N x C frame features from the frozen encoder
    instruction: list[int]      # word ids of the active instruction phrase
    phrase: int
    ego: EgoState
    world: WorldState           # privileged; only oracle agents may read it


class Agent(Protocol):
    def reset(self, scenario: Scenario) -> None: ...
    def __call__(self, obs: Observation) -> np.ndarray: ...


def oracle_waypoints(world: WorldState, ego: EgoState, k: int = 5, speed: float = 4.0,
                     waypoint_dt: float = 0.5) -> np.ndarray:
    """Route points ``speed * waypoint_dt`` apart ahead of the ego projection, in the ego frame.

    Pending stop tags pull the points back onto the tag so the target speed
    falls to zero there.
    """
    scen = world.scenario
    s_vals = world.s + speed * waypoint_dt * np.arange(1, k + 1)
    for i, tag in enumerate(scen.stop_tags):
        if not world.stops_served[i] and world.s <= tag:
            s_vals = np.minimum(s_vals, tag)
    pts = scen.points_at(s_vals) - ego.position
    c, s = np.cos(ego.heading), np.sin(ego.heading)
    return np.stack([c * pts[:, 0] + s * pts[:, 1], -s * pts[:, 0] + c * pts[:, 1]], axis=1)


class OracleAgent:
    def __init__(self, k: int = 5, speed: float = 4.0, waypoint_dt: float = 0.5):
        self.k, self.speed, self.waypoint_dt = k, speed, waypoint_dt

    def reset(self, scenario: Scenario) -> None:
        pass

    def __call__(self, obs: Observation) -> np.ndarray:
        return oracle_waypoints(obs.world, obs.ego, self.k, self.speed, self.waypoint_dt)


class ConstantAgent:
    """Always emits the same waypoints (zeros by default: the car never moves)."""

    def __init__(self, waypoints: np.ndarray | None = None, k: int = 5):
        self.waypoints = np.zeros((k, 2)) if waypoints is None else np.asarray(waypoints, float)

    def reset(self, scenario: Scenario) -> None:
        pass

    def __call__(self, obs: Observation) -> np.ndarray:
        return self.waypoints


def observe(world: WorldState, ego: EgoState, encoder: FrameEncoder) -> Observation:
    phrase = world.scenario.instruction_at(world.s)
    return Observation(world.step, encoder(world, ego), tokenize(phrase), phrase, ego, world)


def run_episode(agent: Agent, scenario: Scenario, encoder: FrameEncoder,
                cfg: SimConfig | None = None, gains: PidGains | None = None,
                perturb: "PerturbFn | None" = None, on_step=None,
                start: EgoState | None = None) -> DriveLog:
    """Closed loop: encode -> agent -> PID -> step, until a terminal status.

    ``perturb(step, action) -> action`` lets data collection inject steering
    noise; ``on_step(obs, waypoints)`` observes every decision. ``start``
    overrides the default pose at the route origin.
    """
    cfg = cfg or SimConfig()
    world = WorldState.initial(scenario)
    ego = start if start is not None else start_state(scenario)
    world.s, world.lateral = scenario.project(ego.position)
    controller = PIDController(gains)
    agent.reset(scenario)
    log = DriveLog()
    limit = cfg.step_limit(scenario.route_length)
    best, best_step = 0.0, 0
    for t in range(limit):
        obs = observe(world, ego, encoder)
        waypoints = np.asarray(agent(obs), dtype=np.float64)
        if on_step is not None:
            on_step(obs, waypoints)
        try:
            action = controller(waypoints, ego, cfg.dt)
        except NumericError as exc:
            log.status, log.diagnostic = "aborted", f"step {t}: {exc}"
            return log
        if perturb is not None:
            action = perturb(t, action)
        world, ego, events = step(world, ego, action, cfg.dt, cfg)
        log.records.append(StepRecord(t, ego.x, ego.y, ego.heading, ego.speed, action[0], action[1],
                                      world.max_progress, tuple(events)))
        if world.max_progress >= scenario.route_length - cfg.finish_tolerance:
            log.status = "finished"
            return log
        if "deviation" in events:
            log.status = "deviated"
            return log
        if world.max_progress > best + cfg.progress_eps:
            best, best_step = world.max_progress, t
        elif t - best_step >= cfg.block_timeout:
            log.status = "blocked"
            return log
    log.status = "timeout"
    return log


class PerturbFn(Protocol):
    def __call__(self, step: int, action: tuple[float, float]) -> tuple[float, float]: ...
