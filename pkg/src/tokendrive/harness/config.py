"""Run configuration: strict ``key = value`` files, CLI overrides, model digest."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from tokendrive.errors import ConfigError
from tokendrive.sim.scenario import TIERS

REDUCTIONS = ("ccdp", "dynamic_prune", "pooling")
DDIA_MODES = ("on", "causal")
SCATTERS = ("replace", "add")

# Keys that change the parameter set or how it is applied; they define the digest.
MODEL_KEYS = ("n_tokens", "dim", "lm_dim", "heads", "mefa_blocks", "recon_blocks", "lm_blocks",
              "waypoints", "frames", "reduction", "ddia", "scatter", "ratio", "capacity",
              "rope_base", "enc_seed", "feature_scale")


@dataclass(frozen=True)
class RunConfig:
    # model
    n_tokens: int = 16
    dim: int = 32
    lm_dim: int = 64
    heads: int = 4
    mefa_blocks: int = 1
    recon_blocks: int = 2
    lm_blocks: int = 2
    waypoints: int = 5
    frames: int = 2                 # visual frames fed to the LM per decision
    rope_base: float = 10000.0
    # objective
    ratio: float = 0.3
    capacity: int = 10
    lambda1: float = 10.0
    lambda2: float = 1.0
    tau: float = 1.0
    # optimisation
    lr: float = 1e-3
    momentum: float = 0.9
    clip: float = 1.0
    steps: int = 2000
    batch: int = 1
    log_every: int = 1
    # data
    tier: str = "tiny"
    train_episodes: int = 40
    val_pairs: int = 200
    steer_noise: float = 0.3
    expert_speed: float = 4.0
    obstacles: int = 0
    stop_tags: int = 0
    enc_seed: int = 7
    feature_scale: float = 0.03
    # evaluation
    n_seeds: int = 10
    eval_runs: int = 3
    collision_penalty: float = 0.60
    stop_penalty: float = 0.70
    # switches
    reduction: str = "ccdp"
    ddia: str = "on"
    scatter: str = "replace"
    seed: int = 0

    def __post_init__(self):
        positive = ("n_tokens", "dim", "lm_dim", "heads", "mefa_blocks", "waypoints", "frames",
                    "capacity", "tau", "lr", "clip", "batch", "log_every", "train_episodes",
                    "n_seeds", "eval_runs", "expert_speed", "feature_scale", "rope_base")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        nonneg = ("val_pairs", "recon_blocks", "lm_blocks", "lambda1", "lambda2", "steps", "steer_noise",
                  "obstacles", "stop_tags", "seed", "enc_seed")
        for name in nonneg:
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0 < self.ratio <= 1:
            raise ConfigError(f"ratio must lie in (0, 1], got {self.ratio}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        for name, value in (("collision_penalty", self.collision_penalty), ("stop_penalty", self.stop_penalty)):
            if not 0 <= value <= 1:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        for name, allowed in (("reduction", REDUCTIONS), ("ddia", DDIA_MODES),
                              ("scatter", SCATTERS), ("tier", tuple(TIERS))):
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got '{getattr(self, name)}'")
        for name, width in (("dim", self.dim), ("lm_dim", self.lm_dim)):
            if width % self.heads or (width // self.heads) % 2:
                raise ConfigError(f"{name}={width} must split into {self.heads} heads of even width")

    @property
    def penalties(self) -> dict[str, float]:
        return {"collision": self.collision_penalty, "stop": self.stop_penalty}

    @property
    def kept_target(self) -> int:
        """Token count of the pooling arm."""
        return max(1, int(round(self.ratio * self.n_tokens)))

    def with_overrides(self, **changes) -> "RunConfig":
        return replace(self, **parse_values(changes))

    def digest(self) -> int:
        text = ";".join(f"{k}={getattr(self, k)!r}" for k in MODEL_KEYS)
        return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


_FIELDS = {f.name: f for f in fields(RunConfig)}
_TYPES = {"int": int, "float": float, "str": str}


def parse_values(raw: dict) -> dict:
    out = {}
    for key, value in raw.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key '{key}'")
        kind = _TYPES[_FIELDS[key].type] if isinstance(_FIELDS[key].type, str) else _FIELDS[key].type
        if isinstance(value, kind) and not (kind is int and isinstance(value, bool)):
            out[key] = value
            continue
        try:
            out[key] = kind(value) if kind is not int else int(str(value), 0)
        except (TypeError, ValueError):
            raise ConfigError(f"config key '{key}' expects {kind.__name__}, got {value!r}") from None
    return out


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got '{line}'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'")
        raw[key] = value
    return RunConfig(**parse_values(raw))


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    cfg = RunConfig() if path is None else parse_config_text(Path(path).read_text(encoding="utf-8"), str(path))
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return cfg.with_overrides(**overrides) if overrides else cfg
