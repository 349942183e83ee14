"""Binary sensor features, linear rewards, and discounted feature expectations.

Each of the 13 sensor readings is discretized into one of 16 equal bins,
giving a 208-dimensional one-hot-per-sensor feature vector (feature index =
sensor * 16 + bin). Rewards are dot products against a weight vector of the
same length; feature expectations are discounted sums of feature vectors
averaged over seeded rollouts.

This module also hosts the episode-running machinery shared by the learners:
the HighwayEnv feature-view wrapper and a generic rollout collector that works
for any environment exposing ``reset(seed) -> obs`` / ``step(a) -> (obs, done)``
with observations carrying a ``phi`` array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .world import Scenario, SteerAction, Terminal, WorldConfig, sense_all, spawn_scenario, step_world


def bin_index(distance: float, cfg: WorldConfig) -> int:
    """Bin of a single reading: min(floor(distance / bin_width), num_bins - 1).

    A no-hit reading (distance == sensor_range) lands in the last bin.
    """
    if not 0.0 <= distance <= cfg.sensor_range:
        raise ValueError(f"reading {distance!r} outside [0, {cfg.sensor_range}]")
    return min(int(distance // cfg.bin_width), cfg.num_bins - 1)


def bin_indices(readings, cfg: WorldConfig) -> np.ndarray:
    """Vectorized bin_index over all 13 readings."""
    r = np.asarray(readings, dtype=float)
    if r.shape != (cfg.num_sensors,):
        raise ValueError(f"expected {cfg.num_sensors} readings, got shape {r.shape}")
    if np.any(r < 0.0) or np.any(r > cfg.sensor_range):
        raise ValueError("reading outside [0, sensor_range]")
    return np.minimum((r // cfg.bin_width).astype(np.int64), cfg.num_bins - 1)


def phi_from_bins(bins, cfg: WorldConfig) -> np.ndarray:
    """Dense feature vector from 13 bin indices (one-hot per sensor block)."""
    b = np.asarray(bins, dtype=np.int64)
    phi = np.zeros(cfg.feature_dim)
    phi[np.arange(cfg.num_sensors) * cfg.num_bins + b] = 1.0
    return phi


def phis_from_bin_matrix(bins, cfg: WorldConfig) -> np.ndarray:
    """Dense feature matrix (n, feature_dim) from an (n, 13) bin-index array."""
    b = np.asarray(bins, dtype=np.int64)
    n = b.shape[0]
    phis = np.zeros((n, cfg.feature_dim))
    cols = np.arange(cfg.num_sensors) * cfg.num_bins + b
    phis[np.arange(n)[:, None], cols] = 1.0
    return phis


def featurize(readings, cfg: WorldConfig) -> np.ndarray:
    """Dense 208-entry binary feature vector for a set of sensor readings."""
    return phi_from_bins(bin_indices(readings, cfg), cfg)


def reward(w: np.ndarray, phi: np.ndarray) -> float:
    """Linear reward: dot product of weights with the feature vector."""
    w = np.asarray(w, dtype=float)
    phi = np.asarray(phi, dtype=float)
    if w.shape != phi.shape:
        raise ValueError(f"shape mismatch: {w.shape} vs {phi.shape}")
    return float(w @ phi)


def discounted_feature_sum(phis, gamma: float) -> np.ndarray:
    """Sum over t of gamma^t * phi_t, t starting at 0. Fixed accumulation order."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must be in [0, 1)")
    phis = list(phis)
    if not phis:
        raise ValueError("empty trajectory")
    acc = np.zeros_like(np.asarray(phis[0], dtype=float))
    g = 1.0
    for phi in phis:
        acc += g * np.asarray(phi, dtype=float)
        g *= gamma
    return acc


@dataclass(frozen=True)
class HighwayObs:
    """Per-step view of the highway world: features plus raw context."""

    phi: np.ndarray
    bins: np.ndarray
    readings: np.ndarray
    scenario: Scenario


class HighwayEnv:
    """Stateful episode wrapper over the pure world-stepping functions."""

    def __init__(self, cfg: WorldConfig | None = None):
        self.cfg = cfg or WorldConfig()
        self.scenario = None
        self.terminal = Terminal.NONE

    def _observe(self, scenario, readings) -> HighwayObs:
        bins = bin_indices(readings, self.cfg)
        return HighwayObs(
            phi=phi_from_bins(bins, self.cfg), bins=bins, readings=readings, scenario=scenario
        )

    def reset(self, seed: int) -> HighwayObs:
        self.scenario = spawn_scenario(seed, self.cfg)
        self.terminal = Terminal.NONE
        return self._observe(self.scenario, sense_all(self.scenario, self.cfg))

    def restore(self, scenario: Scenario) -> HighwayObs:
        """Resume from a saved snapshot instead of a fresh spawn."""
        self.scenario = scenario
        self.terminal = Terminal.NONE
        return self._observe(scenario, sense_all(scenario, self.cfg))

    def step(self, action) -> tuple[HighwayObs, bool]:
        if self.scenario is None:
            raise ValueError("reset the environment before stepping")
        outcome = step_world(self.scenario, SteerAction(int(action)), self.cfg)
        self.scenario = outcome.next
        self.terminal = outcome.terminal
        return self._observe(outcome.next, outcome.sensor_readings), outcome.terminal is not Terminal.NONE


class RandomPolicy:
    """Uniform over the three actions; draws from the rollout's RNG."""

    def __init__(self, n_actions: int = 3):
        self.n_actions = n_actions

    def act(self, obs, rng) -> int:
        return int(rng.integers(self.n_actions))


class DriftPolicy:
    """Mostly-straight random baseline: steers uniformly at random on an
    epsilon fraction of steps and holds course otherwise.

    As the reference policy of the recovery loop it keeps the first weight
    vector's sign structure about the task (where the expert's occupancy
    differs from aimless driving) instead of being dominated by the huge
    tilted-heading occupancy of a uniform-random policy.
    """

    def __init__(self, steer_fraction: float = 0.2, n_actions: int = 3):
        self.steer_fraction = steer_fraction
        self.n_actions = n_actions

    def act(self, obs, rng) -> int:
        if rng.random() < self.steer_fraction:
            return int(rng.integers(self.n_actions))
        return 0


@dataclass
class Rollout:
    """One episode: observations (length T+1), actions (length T), end flag."""

    seed: int
    observations: list
    actions: list
    terminal: Terminal | None


def collect_rollout(env, policy, scenario_seed: int, policy_seed: int | None = None) -> Rollout:
    """Run one episode to termination.

    The policy RNG is seeded independently of the scenario so stochastic
    policies are reproducible; deterministic policies ignore it.
    """
    rng = np.random.default_rng(scenario_seed if policy_seed is None else policy_seed)
    obs = env.reset(scenario_seed)
    observations = [obs]
    actions = []
    done = False
    while not done:
        a = policy.act(obs, rng)
        obs, done = env.step(a)
        observations.append(obs)
        actions.append(int(a))
    return Rollout(
        seed=int(scenario_seed),
        observations=observations,
        actions=actions,
        terminal=getattr(env, "terminal", None),
    )


def rollout_feature_sum(rollout: Rollout, gamma: float) -> np.ndarray:
    return discounted_feature_sum([o.phi for o in rollout.observations], gamma)


def estimate_feature_expectations(policy, env, n_rollouts: int, gamma: float, seed: int,
                                  scenario_seeds=None) -> np.ndarray:
    """Monte Carlo feature expectations of a policy.

    Mean of discounted feature sums over n_rollouts episodes. Scenario and
    policy seeds are derived deterministically from ``seed``; passing an
    explicit ``scenario_seeds`` list instead pins the scenario set (one
    rollout per listed seed), which pairs the estimate with another one made
    on the same scenarios and cancels scenario-composition noise. The policy
    is queried as-is (pass a greedy policy for exploitation-only estimates).
    """
    rng = np.random.default_rng(seed)
    if scenario_seeds is not None:
        seeds = [int(s) for s in scenario_seeds]
    else:
        if n_rollouts < 1:
            raise ValueError("n_rollouts must be >= 1")
        seeds = [int(rng.integers(0, 2**63 - 1)) for _ in range(n_rollouts)]
    total = None
    for scenario_seed in seeds:
        policy_seed = int(rng.integers(0, 2**63 - 1))
        mu = rollout_feature_sum(collect_rollout(env, policy, scenario_seed, policy_seed), gamma)
        total = mu if total is None else total + mu
    return total / len(seeds)
