"""Exact tabular machinery: value iteration, policy evaluation, and
closed-form feature expectations on small MDPs.

These solvers are the brute-force oracles for validating the feature and
IRL code independently of the neural learner. Rewards are state-based
(R(s) = w . phi(s)) and collected on departure, so the value of a policy from
the start state equals w . mu(policy) with mu counting phi(s_0) at gamma^0.

Small MDPs ship as versioned plain-text fixture files (see parse_mdp for the
format) under ``highway_irl/fixtures``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .world import Terminal


@dataclass(frozen=True)
class TabularMDP:
    """A small MDP: transition tensor T[s, a, s'], binary feature table
    phi[s], a start state, and a discount factor."""

    transitions: np.ndarray
    features: np.ndarray
    start_state: int
    gamma: float
    name: str = ""

    def __post_init__(self):
        t = np.asarray(self.transitions, dtype=float)
        f = np.asarray(self.features, dtype=float)
        if t.ndim != 3 or t.shape[0] != t.shape[2]:
            raise ValueError("transitions must have shape (S, A, S)")
        if t.shape[0] > 1000 or t.shape[1] > 5:
            raise ValueError("oracle scale is capped at 1000 states / 5 actions")
        if f.ndim != 2 or f.shape[0] != t.shape[0] or f.shape[1] > 32:
            raise ValueError("features must have shape (S, d) with d <= 32")
        if not np.all((f == 0.0) | (f == 1.0)):
            raise ValueError("features must be binary")
        row_sums = t.sum(axis=2)
        if np.any(np.abs(row_sums - 1.0) > 1e-12) or np.any(t < 0.0):
            raise ValueError("each T[s][a] row must be a distribution (sum 1)")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if not 0 <= self.start_state < t.shape[0]:
            raise ValueError("start state out of range")
        object.__setattr__(self, "transitions", t)
        object.__setattr__(self, "features", f)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def policy_matrix(mdp: TabularMDP, policy) -> np.ndarray:
    """Action-probability matrix (S, A) from a deterministic index array or
    an already-stochastic matrix."""
    p = np.asarray(policy)
    if p.ndim == 1:
        m = np.zeros((mdp.n_states, mdp.n_actions))
        m[np.arange(mdp.n_states), p.astype(int)] = 1.0
        return m
    if p.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError("policy matrix has wrong shape")
    return p.astype(float)


def uniform_policy(mdp: TabularMDP) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


def _chain_matrix(mdp: TabularMDP, policy) -> np.ndarray:
    """State-to-state transition matrix under a policy."""
    pi = policy_matrix(mdp, policy)
    return np.einsum("sa,sat->st", pi, mdp.transitions)


def value_iteration(mdp: TabularMDP, w, tol: float = 1e-10):
    """Bellman-optimality iteration for the reward w . phi.

    Returns (Q, greedy_policy); sweeps until the sup-norm change of V drops
    below tol (gamma < 1 guarantees convergence). Ties break toward the
    lowest action index.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    r = mdp.features @ np.asarray(w, dtype=float)
    v = np.zeros(mdp.n_states)
    while True:
        q = r[:, None] + mdp.gamma * (mdp.transitions @ v)
        v_new = q.max(axis=1)
        delta = float(np.max(np.abs(v_new - v)))
        v = v_new
        if delta < tol:
            break
    q = r[:, None] + mdp.gamma * (mdp.transitions @ v)
    return q, q.argmax(axis=1)


def policy_value(mdp: TabularMDP, policy, w) -> np.ndarray:
    """Exact state values of a policy under the reward w . phi."""
    r = mdp.features @ np.asarray(w, dtype=float)
    p = _chain_matrix(mdp, policy)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p, r)


def exact_feature_expectations(mdp: TabularMDP, policy, horizon: int | None = None) -> np.ndarray:
    """Closed-form discounted feature expectations of a policy.

    Infinite horizon solves the discounted-visitation flow system
    d = e_s0 + gamma * P^T d; a finite horizon H sums the first H discounted
    visitation terms (t = 0 .. H-1) by dynamic programming.
    """
    p = _chain_matrix(mdp, policy)
    e0 = np.zeros(mdp.n_states)
    e0[mdp.start_state] = 1.0
    if horizon is None:
        visitation = np.linalg.solve(np.eye(mdp.n_states) - mdp.gamma * p.T, e0)
    else:
        visitation = np.zeros(mdp.n_states)
        cur = e0
        for _ in range(horizon):
            visitation += cur
            cur = mdp.gamma * (p.T @ cur)
    return mdp.features.T @ visitation


def mc_horizon(gamma: float, tail: float = 1e-6) -> int:
    """Steps needed before the remaining discounted mass falls below ``tail``."""
    if gamma == 0.0:
        return 1
    return max(1, math.ceil(math.log(tail * (1.0 - gamma)) / math.log(gamma)))


@dataclass(frozen=True)
class TabularObs:
    """Observation adapter so tabular MDPs run through the generic rollout
    machinery: phi is a row view of the feature table."""

    phi: np.ndarray
    state: int


class TabularEnv:
    """Samples episodes from a TabularMDP, truncating the infinite horizon
    where the discount tail is negligible."""

    def __init__(self, mdp: TabularMDP, horizon: int | None = None):
        self.mdp = mdp
        self.horizon = horizon if horizon is not None else mc_horizon(mdp.gamma)
        self.state = None
        self.steps = 0
        self.terminal = None
        self._rng = None

    def reset(self, seed: int):
        self.state = self.mdp.start_state
        self.steps = 0
        self.terminal = None
        self._rng = np.random.default_rng(seed)
        return TabularObs(self.mdp.features[self.state], self.state)

    def step(self, action):
        probs = self.mdp.transitions[self.state, int(action)]
        self.state = int(self._rng.choice(self.mdp.n_states, p=probs))
        self.steps += 1
        done = self.steps >= self.horizon
        self.terminal = Terminal.HORIZON if done else None
        return TabularObs(self.mdp.features[self.state], self.state), done


class TabularPolicy:
    """Wraps a deterministic or stochastic tabular policy for rollouts."""

    def __init__(self, policy, n_actions: int):
        self.matrix = np.asarray(policy)
        self.n_actions = n_actions

    def act(self, obs, rng) -> int:
        if self.matrix.ndim == 1:
            return int(self.matrix[obs.state])
        return int(rng.choice(self.n_actions, p=self.matrix[obs.state]))


def mc_feature_expectations(mdp: TabularMDP, policy, n_rollouts: int, seed: int,
                            horizon: int | None = None) -> np.ndarray:
    """Vectorized Monte Carlo estimate of feature expectations.

    All rollouts advance in lockstep; successor states are sampled by inverse
    transform against cumulative transition rows. Used as the sampling-based
    cross-check of exact_feature_expectations.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    horizon = horizon if horizon is not None else mc_horizon(mdp.gamma)
    pi = policy_matrix(mdp, policy)
    pi_cum = np.cumsum(pi, axis=1)
    t_cum = np.cumsum(mdp.transitions, axis=2)
    rng = np.random.default_rng(seed)
    states = np.full(n_rollouts, mdp.start_state, dtype=np.int64)
    total = np.zeros(mdp.n_features)
    g = 1.0
    for _ in range(horizon):
        total += g * mdp.features[states].sum(axis=0)
        a = (rng.random((n_rollouts, 1)) < pi_cum[states]).argmax(axis=1)
        states = (rng.random((n_rollouts, 1)) < t_cum[states, a]).argmax(axis=1)
        g *= mdp.gamma
    return total / n_rollouts


# ---------------------------------------------------------------------------
# Plain-text fixture format


def parse_mdp(text: str):
    """Parse the v1 fixture format.

    Line-oriented, '#' comments allowed::

        mdp 1
        name planted4
        gamma 0.9
        start 0
        states 4
        actions 2
        features 4
        transition S A  s:p s:p ...
        feature S  b b b ...
        reward w0 w1 ...        # optional planted weights
        end

    Returns (TabularMDP, planted_weights_or_None).
    """
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or not lines[0].startswith("mdp "):
        raise ValueError("not an mdp fixture file")
    version = lines[0].split()[1]
    if version != "1":
        raise ValueError(f"unsupported mdp fixture version: {version}")
    meta = {}
    transitions = []
    feature_rows = {}
    reward = None
    for ln in lines[1:]:
        parts = ln.split()
        key = parts[0]
        if key == "end":
            break
        if key in ("name",):
            meta[key] = parts[1]
        elif key in ("gamma",):
            meta[key] = float(parts[1])
        elif key in ("start", "states", "actions", "features"):
            meta[key] = int(parts[1])
        elif key == "transition":
            s, a = int(parts[1]), int(parts[2])
            dist = [(int(p.split(":")[0]), float(p.split(":")[1])) for p in parts[3:]]
            transitions.append((s, a, dist))
        elif key == "feature":
            feature_rows[int(parts[1])] = [float(b) for b in parts[2:]]
        elif key == "reward":
            reward = np.array([float(x) for x in parts[1:]])
        else:
            raise ValueError(f"unknown fixture line: {ln}")
    else:
        raise ValueError("fixture file missing 'end'")
    n_s, n_a, d = meta["states"], meta["actions"], meta["features"]
    t = np.zeros((n_s, n_a, n_s))
    for s, a, dist in transitions:
        for sp, p in dist:
            t[s, a, sp] = p
    f = np.zeros((n_s, d))
    for s, row in feature_rows.items():
        f[s] = row
    mdp = TabularMDP(
        transitions=t,
        features=f,
        start_state=meta["start"],
        gamma=meta["gamma"],
        name=meta.get("name", ""),
    )
    if reward is not None and reward.shape != (d,):
        raise ValueError("reward line length does not match feature count")
    return mdp, reward


def load_mdp(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_mdp(fh.read())


BUILTIN_MDPS = ("chain2", "alternator2", "planted4", "gridworld5")


def builtin_mdp(name: str):
    """Load one of the shipped fixtures by name."""
    if name not in BUILTIN_MDPS:
        raise ValueError(f"unknown builtin mdp {name!r}; have {BUILTIN_MDPS}")
    text = resources.files("highway_irl").joinpath(f"fixtures/{name}.mdp").read_text()
    return parse_mdp(text)
