"""PID controllers turning ego-frame waypoints into steering and acceleration."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tokendrive.errors import DimensionError, NumericError


@dataclass(frozen=True)
class PidGains:
    lat_kp: float = 1.5
    lat_ki: float = 0.0
    lat_kd: float = 0.05
    lon_kp: float = 1.0
    lon_ki: float = 0.05
    lon_kd: float = 0.0
    lookahead: float = 3.0       # metres; first waypoint at least this far steers
    waypoint_dt: float = 0.5     # seconds between consecutive waypoints
    max_speed: float = 8.0
    integral_limit: float = 5.0


class _Pid:
    def __init__(self, kp: float, ki: float, kd: float, limit: float):
        self.kp, self.ki, self.kd, self.limit = kp, ki, kd, limit
        self.reset()

    def reset(self) -> None:
        self.integral = 0.0
        self.prev: float | None = None

    def __call__(self, error: float, dt: float) -> float:
        self.integral = float(np.clip(self.integral + error * dt, -self.limit, self.limit))
        deriv = 0.0 if self.prev is None else (error - self.prev) / dt
        self.prev = error
        return self.kp * error + self.ki * self.integral + self.kd * deriv


def target_speed(waypoints: np.ndarray, gains: PidGains) -> float:
    """Mean spacing between consecutive waypoints (starting at the ego) per waypoint interval."""
    pts = np.vstack([np.zeros((1, 2)), waypoints])
    spacing = np.linalg.norm(np.diff(pts, axis=0), axis=1).mean()
    return float(min(spacing / gains.waypoint_dt, gains.max_speed))


def lookahead_point(waypoints: np.ndarray, gains: PidGains) -> np.ndarray:
    dist = np.linalg.norm(waypoints, axis=1)
    far = np.flatnonzero(dist >= gains.lookahead)
    return waypoints[far[0] if len(far) else -1]


class PIDController:
    """Lateral PID on heading error to a lookahead waypoint, longitudinal PID on speed."""

    def __init__(self, gains: PidGains | None = None):
        self.gains = gains or PidGains()
        g = self.gains
        self.lat = _Pid(g.lat_kp, g.lat_ki, g.lat_kd, g.integral_limit)
        self.lon = _Pid(g.lon_kp, g.lon_ki, g.lon_kd, g.integral_limit)

    def reset(self) -> None:
        self.lat.reset()
        self.lon.reset()

    def __call__(self, waypoints, ego, dt: float = 0.1) -> tuple[float, float]:
        wp = np.asarray(waypoints, dtype=np.float64).reshape(-1, 2)
        if len(wp) == 0:
            raise DimensionError("pid_control needs at least one waypoint")
        if not np.isfinite(wp).all():
            raise NumericError("pid_control: non-finite waypoints")
        aim = lookahead_point(wp, self.gains)
        heading_err = float(np.arctan2(aim[1], aim[0])) if np.any(aim) else 0.0
        steer = float(np.clip(self.lat(heading_err, dt), -1.0, 1.0))
        speed_err = target_speed(wp, self.gains) - ego.speed
        accel = float(np.clip(self.lon(speed_err, dt), -1.0, 1.0))
        return steer, accel


def pid_control(waypoints, ego, gains: PidGains | None = None, dt: float = 0.1) -> tuple[float, float]:
    """Stateless single call (fresh integrator and derivative state)."""
    return PIDController(gains)(waypoints, ego, dt)
