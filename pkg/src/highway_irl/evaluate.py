"""Behavioral evaluation of a driving policy.

Three views: the per-feature absolute difference between expert and agent
feature expectations (a 13x16 table), classical motion metrics (collision
rate over seeded scenarios, lane-keeping ratio outside avoidance windows,
a lateral-jerk proxy), and a sensor/bin/value export of weight or mu vectors
for external plotting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expert import AVOID_TRIGGER_DISTANCE, blocking_obstacle
from .features import HighwayEnv, collect_rollout, rollout_feature_sum
from .world import WorldConfig

AVOIDANCE_EXCLUSION_WINDOW = 10


def mu_diff_table(mu_E, mu_A, cfg: WorldConfig | None = None) -> np.ndarray:
    """Absolute per-feature differences arranged as (sensor, bin)."""
    cfg = cfg or WorldConfig()
    a = np.asarray(mu_E, dtype=float)
    b = np.asarray(mu_A, dtype=float)
    if a.shape != (cfg.feature_dim,) or b.shape != (cfg.feature_dim,):
        raise ValueError(f"expected vectors of length {cfg.feature_dim}")
    return np.abs(a - b).reshape(cfg.num_sensors, cfg.num_bins)


def jerk_proxy(ys) -> float:
    """Mean squared second difference of lateral position.

    Zero for straight and constant-lateral-velocity motion; grows with
    abrupt lateral corrections.
    """
    y = np.asarray(ys, dtype=float)
    if y.ndim != 1 or len(y) < 3:
        raise ValueError("need at least 3 timesteps")
    second = y[2:] - 2.0 * y[1:-1] + y[:-2]
    return float(np.mean(second * second))


def lane_keeping_flags(rollout, cfg: WorldConfig):
    """Per-step (in_lane, eligible) booleans for one rollout.

    A step is in-lane when |y - nearest lane center| <= 1; steps within
    AVOIDANCE_EXCLUSION_WINDOW of an active avoidance trigger are excluded
    from the eligible set.
    """
    ys = [o.scenario.ego.y for o in rollout.observations]
    triggered = [
        blocking_obstacle(o.scenario, cfg) is not None for o in rollout.observations
    ]
    n = len(ys)
    eligible = np.ones(n, dtype=bool)
    for i, hit in enumerate(triggered):
        if hit:
            lo = max(0, i - AVOIDANCE_EXCLUSION_WINDOW)
            hi = min(n, i + AVOIDANCE_EXCLUSION_WINDOW + 1)
            eligible[lo:hi] = False
    in_lane = np.array(
        [abs(y - cfg.lane_center(cfg.nearest_lane(y))) <= 1.0 for y in ys], dtype=bool
    )
    return in_lane, eligible


@dataclass
class EvalReport:
    """Aggregate behavioral metrics over a batch of seeded scenarios."""

    collision_rate: float
    lane_keeping_ratio: float
    mean_jerk: float
    scenarios_evaluated: int
    mu_agent: np.ndarray
    mu_diff: np.ndarray | None = None

    def to_text(self) -> str:
        lines = [
            "evaluation report",
            f"scenarios_evaluated {self.scenarios_evaluated}",
            f"collision_rate {self.collision_rate:.6f}",
            f"lane_keeping_ratio {self.lane_keeping_ratio:.6f}",
            f"mean_jerk {self.mean_jerk:.9f}",
        ]
        if self.mu_diff is not None:
            lines.append(f"mu_diff_mean {float(self.mu_diff.mean()):.6f}")
            lines.append(f"mu_diff_max {float(self.mu_diff.max()):.6f}")
            lines.append("mu_diff_table (rows=sensors, cols=bins)")
            for row in self.mu_diff:
                lines.append(" ".join(f"{v:.4f}" for v in row))
        return "\n".join(lines) + "\n"


def evaluate_policy(policy, n_scenarios: int, seed: int, cfg: WorldConfig | None = None,
                    gamma: float = 0.9, mu_E=None) -> EvalReport:
    """Roll the policy through n seeded scenarios and aggregate metrics.

    The same rollouts feed every metric, so a report is reproducible from
    (policy, n, seed). When the expert's feature expectations are given the
    report includes the difference table.
    """
    if n_scenarios < 1:
        raise ValueError("n_scenarios must be >= 1")
    cfg = cfg or WorldConfig()
    env = HighwayEnv(cfg)
    rng = np.random.default_rng(seed)
    collisions = 0
    in_lane_total = 0
    eligible_total = 0
    jerks = []
    mu_total = np.zeros(cfg.feature_dim)
    for _ in range(n_scenarios):
        rollout = collect_rollout(env, policy, int(rng.integers(0, 2**63 - 1)))
        if rollout.terminal.is_collision:
            collisions += 1
        in_lane, eligible = lane_keeping_flags(rollout, cfg)
        in_lane_total += int(np.sum(in_lane & eligible))
        eligible_total += int(np.sum(eligible))
        ys = [o.scenario.ego.y for o in rollout.observations]
        if len(ys) >= 3:
            jerks.append(jerk_proxy(ys))
        mu_total += rollout_feature_sum(rollout, gamma)
    mu_agent = mu_total / n_scenarios
    return EvalReport(
        collision_rate=collisions / n_scenarios,
        lane_keeping_ratio=(in_lane_total / eligible_total) if eligible_total else 1.0,
        mean_jerk=float(np.mean(jerks)) if jerks else 0.0,
        scenarios_evaluated=n_scenarios,
        mu_agent=mu_agent,
        mu_diff=None if mu_E is None else mu_diff_table(mu_E, mu_agent, cfg),
    )


def collision_rate(policy, n_scenarios: int, seed: int, cfg: WorldConfig | None = None) -> float:
    """Fraction of seeded scenarios ending in a wall or car collision."""
    return evaluate_policy(policy, n_scenarios, seed, cfg).collision_rate


def export_weights(w, cfg: WorldConfig | None = None):
    """(sensor, bin, value) rows in sensor-major order."""
    cfg = cfg or WorldConfig()
    w = np.asarray(w, dtype=float)
    if w.shape != (cfg.feature_dim,):
        raise ValueError(f"expected length {cfg.feature_dim}, got {w.shape}")
    return [
        (s, b, float(w[s * cfg.num_bins + b]))
        for s in range(cfg.num_sensors)
        for b in range(cfg.num_bins)
    ]


def write_sensor_table(path, values, cfg: WorldConfig | None = None):
    """CSV export (columns: sensor, bin, value) of a 208-entry vector."""
    from .persist import fmt

    rows = export_weights(values, cfg)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("sensor,bin,value\n")
        for s, b, v in rows:
            fh.write(f"{s},{b},{fmt(v)}\n")


def read_sensor_table(path, cfg: WorldConfig | None = None) -> np.ndarray:
    cfg = cfg or WorldConfig()
    out = np.zeros(cfg.feature_dim)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "sensor,bin,value":
            raise ValueError(f"unexpected header {header!r}")
        for line in fh:
            s, b, v = line.strip().split(",")
            out[int(s) * cfg.num_bins + int(b)] = float(v)
    return out
