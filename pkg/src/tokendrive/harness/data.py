"""Expert demonstrations with steering perturbations, cut into teacher-forced samples."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tokendrive.harness.config import RunConfig
from tokendrive.harness.model import Sample
from tokendrive.instructions import tokenize
from tokendrive.sim import FrameEncoder, OracleAgent, ScenarioConfig, SimConfig, generate_scenario, run_episode

# Scenario seed ranges; disjoint so evaluation routes are never trained on.
TRAIN_BASE = 10_000
VAL_BASE = 50_000
EVAL_BASE = 90_000


def make_encoder(cfg: RunConfig) -> FrameEncoder:
    return FrameEncoder(cfg.n_tokens, cfg.dim, cfg.enc_seed, cfg.feature_scale)


def scenario_config(cfg: RunConfig, tier: str | None = None) -> ScenarioConfig:
    return ScenarioConfig.for_tier(tier or cfg.tier, obstacles=cfg.obstacles, stop_tags=cfg.stop_tags)


@dataclass
class Demo:
    features: np.ndarray        # (T, N, C)
    phrases: list[int]
    targets: np.ndarray         # (T, K, 2)

    def __len__(self) -> int:
        return len(self.phrases)


class SteerNoise:
    """Smooth (AR(1)) steering perturbation; the labels stay the oracle's."""

    def __init__(self, sigma: float, seed: int, rho: float = 0.95):
        self.rng = np.random.Generator(np.random.Philox(key=seed))
        self.sigma, self.rho, self.state = sigma, rho, 0.0

    def __call__(self, step: int, action):
        self.state = self.rho * self.state + self.sigma * np.sqrt(1 - self.rho ** 2) * self.rng.standard_normal()
        return float(np.clip(action[0] + self.state, -1.0, 1.0)), action[1]


def collect_demo(cfg: RunConfig, scenario_seed: int, noise_seed: int, encoder: FrameEncoder) -> Demo:
    scen = generate_scenario(scenario_seed, scenario_config(cfg))
    feats, phrases, targets = [], [], []

    def record(obs, waypoints):
        feats.append(obs.features)
        phrases.append(obs.phrase)
        targets.append(np.array(waypoints))

    agent = OracleAgent(cfg.waypoints, cfg.expert_speed)
    noise = SteerNoise(cfg.steer_noise, noise_seed) if cfg.steer_noise > 0 else None
    run_episode(agent, scen, encoder, SimConfig(), perturb=noise, on_step=record)
    return Demo(np.array(feats), phrases, np.array(targets))


def bank_averages(features: np.ndarray, capacity: int) -> list[np.ndarray | None]:
    """Mean of the ``capacity`` frames preceding each frame (None for the first)."""
    csum = np.concatenate([np.zeros((1,) + features.shape[1:]), np.cumsum(features, axis=0)])
    out: list[np.ndarray | None] = [None]
    for t in range(1, len(features)):
        lo = max(0, t - capacity)
        out.append((csum[t] - csum[lo]) / (t - lo))
    return out


class SampleSource:
    """All teacher-forced samples of a set of demos, addressable by flat index."""

    def __init__(self, demos: list[Demo], cfg: RunConfig):
        self.demos, self.cfg = demos, cfg
        self.banks = [bank_averages(d.features, cfg.capacity) for d in demos]
        self.index = [(i, t) for i, d in enumerate(demos) for t in range(len(d))]

    def __len__(self) -> int:
        return len(self.index)

    def __getitem__(self, k: int) -> Sample:
        i, t = self.index[k]
        d = self.demos[i]
        window = range(max(0, t - self.cfg.frames + 1), t + 1)
        return Sample([d.features[j] for j in window], [self.banks[i][j] for j in window],
                      tokenize(d.phrases[t]), d.targets[t])


def build_source(cfg: RunConfig, base: int, episodes: int, noise: bool = True) -> SampleSource:
    encoder = make_encoder(cfg)
    demos = []
    for i in range(episodes):
        c = cfg if noise else cfg.with_overrides(steer_noise=0.0)
        demos.append(collect_demo(c, base + i, cfg.seed * 1_000_003 + base + i, encoder))
    return SampleSource(demos, cfg)
