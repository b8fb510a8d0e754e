"""Procedural routes: straight pieces and arcs, each tagged with an instruction phrase."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tokendrive.errors import ConfigError
from tokendrive.instructions import LEFT, RIGHT, STOP, STRAIGHT, phrase_ids

# Route length bounds per difficulty tier, metres (upper bound exclusive).
TIERS: dict[str, tuple[float, float]] = {
    "tiny": (40.0, 150.0),
    "short": (150.0, 500.0),
    "long": (500.0, 800.0),
}

# Instructions switch this far before the segment they describe.
INSTRUCTION_LEAD_M = 8.0


@dataclass(frozen=True)
class ScenarioConfig:
    min_length: float = 40.0
    max_length: float = 150.0
    obstacles: int = 0
    stop_tags: int = 0
    straight_range: tuple[float, float] = (15.0, 40.0)
    radius_range: tuple[float, float] = (12.0, 25.0)
    turn_angle_range: tuple[float, float] = (np.pi / 4, np.pi / 2)
    turn_probability: float = 0.5
    spacing: float = 0.5
    obstacle_radius: float = 1.0
    obstacle_offset: tuple[float, float] = (3.0, 4.5)
    obstacle_speed: float = 1.0

    def __post_init__(self):
        if not (0 < self.min_length < self.max_length):
            raise ConfigError(f"route length bounds must satisfy 0 < min < max, got "
                              f"({self.min_length}, {self.max_length})")
        if self.straight_range[0] <= 0 or self.straight_range[0] > self.straight_range[1]:
            raise ConfigError(f"bad straight segment range {self.straight_range}")
        if self.radius_range[0] <= 0 or self.radius_range[0] > self.radius_range[1]:
            raise ConfigError(f"bad turn radius range {self.radius_range}")
        if self.spacing <= 0:
            raise ConfigError(f"route sample spacing must be positive, got {self.spacing}")
        if self.obstacles < 0 or self.stop_tags < 0:
            raise ConfigError("obstacle and stop tag counts must be non-negative")

    @classmethod
    def for_tier(cls, tier: str, **overrides) -> "ScenarioConfig":
        if tier not in TIERS:
            raise ConfigError(f"unknown tier '{tier}', expected one of {sorted(TIERS)}")
        lo, hi = TIERS[tier]
        return cls(min_length=lo, max_length=hi, **overrides)


@dataclass(frozen=True)
class Segment:
    kind: str          # straight | left | right
    phrase: int        # index into PHRASE_LIST
    start_s: float
    end_s: float


@dataclass(frozen=True)
class Obstacle:
    position: tuple[float, float]
    velocity: tuple[float, float]
    radius: float


@dataclass
class Scenario:
    seed: int
    points: np.ndarray             # (P, 2) dense polyline
    arc: np.ndarray                # (P,) cumulative arc length
    segments: list[Segment]
    obstacles: list[Obstacle] = field(default_factory=list)
    stop_tags: list[float] = field(default_factory=list)   # arc-length positions

    @property
    def route_length(self) -> float:
        return float(self.arc[-1])

    def segment_at(self, s: float) -> Segment:
        for seg in self.segments:
            if s < seg.end_s:
                return seg
        return self.segments[-1]

    def instruction_at(self, s: float) -> int:
        """Phrase index the agent should follow when at arc length ``s``."""
        return self.segment_at(s + INSTRUCTION_LEAD_M).phrase

    def point_at(self, s: float) -> np.ndarray:
        """Route point at arc length ``s``; extrapolates straight past either end."""
        pts, arc = self.points, self.arc
        if s <= 0.0:
            t = pts[1] - pts[0]
            return pts[0] + s * t / np.linalg.norm(t)
        if s >= arc[-1]:
            t = pts[-1] - pts[-2]
            return pts[-1] + (s - arc[-1]) * t / np.linalg.norm(t)
        i = int(np.searchsorted(arc, s, side="right")) - 1
        f = (s - arc[i]) / (arc[i + 1] - arc[i])
        return pts[i] + f * (pts[i + 1] - pts[i])

    def points_at(self, s_values) -> np.ndarray:
        return np.array([self.point_at(float(s)) for s in s_values])

    def tangent_at(self, s: float) -> np.ndarray:
        i = int(np.clip(np.searchsorted(self.arc, s, side="right") - 1, 0, len(self.arc) - 2))
        t = self.points[i + 1] - self.points[i]
        return t / np.linalg.norm(t)

    def project(self, position, hint: float = 0.0, back: float = 5.0,
                ahead: float = 25.0) -> tuple[float, float]:
        """(arc length, signed lateral offset) of the nearest route point near ``hint``.

        The search is windowed around the hint so self-crossing routes do not
        make the projection jump. Positive lateral offset is left of the route.
        """
        p = np.asarray(position, dtype=np.float64)
        lo = max(0, int(np.searchsorted(self.arc, hint - back)) - 1)
        hi = min(len(self.arc) - 1, int(np.searchsorted(self.arc, hint + ahead)) + 1)
        a, b = self.points[lo:hi], self.points[lo + 1:hi + 1]
        d = b - a
        seg_len2 = (d * d).sum(axis=1)
        t = np.clip(((p - a) * d).sum(axis=1) / seg_len2, 0.0, 1.0)
        foot = a + t[:, None] * d
        dist2 = ((p - foot) ** 2).sum(axis=1)
        k = int(np.argmin(dist2))
        s = float(self.arc[lo + k] + t[k] * np.sqrt(seg_len2[k]))
        rel = p - foot[k]
        lateral = float(d[k, 0] * rel[1] - d[k, 1] * rel[0]) / np.sqrt(seg_len2[k])
        return s, lateral


def _pick_phrase(rng: np.random.Generator, kind: str) -> int:
    ids = phrase_ids(kind)
    return ids[int(rng.integers(len(ids)))]


def generate_scenario(seed: int, cfg: ScenarioConfig | None = None) -> Scenario:
    """Deterministic route, obstacles and stop tags for ``seed``."""
    cfg = cfg or ScenarioConfig()
    ds = cfg.spacing
    pad = min(ds, 0.25 * (cfg.max_length - cfg.min_length))
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    target = float(rng.uniform(cfg.min_length + pad, cfg.max_length - pad))

    pts = [np.zeros(2)]
    heading = 0.0
    bounds: list[tuple[str, int, int, int]] = []
    total = 0.0
    last_turn = True   # open with a straight piece
    # stop within half a sample of the target; ``pad`` keeps that inside the bounds
    while target - total > 0.5 * min(ds, pad):
        turn = (not last_turn) and rng.random() < cfg.turn_probability
        if turn:
            kind = LEFT if rng.random() < 0.5 else RIGHT
            radius = float(rng.uniform(*cfg.radius_range))
            angle = float(rng.uniform(*cfg.turn_angle_range))
            length = radius * angle
            if length > target - total:
                # a truncated arc would be a turn instruction without the turn
                turn = False
        if not turn:
            kind = STRAIGHT
            length = min(float(rng.uniform(*cfg.straight_range)), target - total)
        n = max(1, int(np.ceil(length / ds)))
        step = length / n
        sign = 1.0 if kind == LEFT else -1.0
        for _ in range(n):
            if kind == STRAIGHT:
                pts.append(pts[-1] + step * np.array([np.cos(heading), np.sin(heading)]))
                total += step
            else:
                # chord of the arc piece; slightly shorter than ``step``
                dth = sign * step / radius
                chord = 2 * radius * np.sin(abs(dth) / 2)
                mid = heading + dth / 2
                pts.append(pts[-1] + chord * np.array([np.cos(mid), np.sin(mid)]))
                heading += dth
                total += chord
        bounds.append((kind, _pick_phrase(rng, kind), len(pts) - 1 - n, len(pts) - 1))
        last_turn = turn
    if not bounds:
        raise ConfigError("scenario config produced a route with no segments")

    points = np.array(pts)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])
    segments = [Segment(k, ph, float(arc[i0]), float(arc[i1])) for k, ph, i0, i1 in bounds]
    scen = Scenario(seed=int(seed), points=points, arc=arc, segments=segments)

    stops = []
    straights = [i for i, s in enumerate(segments) if s.kind == STRAIGHT and s.end_s - s.start_s > 12.0]
    for i in sorted(rng.permutation(straights)[:cfg.stop_tags]):
        seg = segments[i]
        stops.append(float(rng.uniform(seg.start_s + 4.0, seg.end_s - 4.0)))
        segments[i] = Segment(seg.kind, _pick_phrase(rng, STOP), seg.start_s, seg.end_s)
    scen.stop_tags = stops

    for _ in range(cfg.obstacles):
        s = float(rng.uniform(min(20.0, 0.5 * arc[-1]), arc[-1]))
        side = 1.0 if rng.random() < 0.5 else -1.0
        offset = side * float(rng.uniform(*cfg.obstacle_offset))
        t = scen.tangent_at(s)
        normal = np.array([-t[1], t[0]])
        pos = scen.point_at(s) + offset * normal
        vel = t * float(rng.uniform(-cfg.obstacle_speed, cfg.obstacle_speed))
        scen.obstacles.append(Obstacle((float(pos[0]), float(pos[1])),
                                       (float(vel[0]), float(vel[1])), cfg.obstacle_radius))
    return scen
