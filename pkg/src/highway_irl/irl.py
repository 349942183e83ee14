"""Projection-based reward recovery from demonstrations.

The outer loop alternates between (a) solving the forward RL problem for the
current weight vector and estimating the resulting policy's feature
expectations, and (b) orthogonally projecting the expert's feature
expectations onto the line through the running projection point and the new
policy's expectations. The weight vector is always the residual
w = mu_E - mu_bar and the margin t = ||w||_2 is the termination quantity;
t is non-increasing by construction because the projection point can only
move closer to mu_E.

Round seeds are derived statelessly from (master_seed, round index), so a run
interrupted after any round continues identically after reloading its state.

The RL step is pluggable: DQNSolver trains the neural learner on the highway
world; ExactSolver runs value iteration on a tabular oracle so the loop's
math can be validated in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import tabular
from .dqn import DQNTrainer, GreedyQPolicy, TrainSchedule
from .features import (
    DriftPolicy,
    HighwayEnv,
    discounted_feature_sum,
    estimate_feature_expectations,
    phi_from_bins,
)
from .world import WorldConfig


class DegenerateProjectionError(RuntimeError):
    """New policy's feature expectations coincide with the projection point;
    the projection direction is undefined."""


@dataclass
class IRLConfig:
    """Outer-loop settings. max_iterations counts RL trainings."""

    epsilon_stop: float = 0.1
    max_iterations: int = 6
    rollouts_per_mu: int = 50
    gamma: float = 0.9
    dqn_schedule: TrainSchedule = field(default_factory=TrainSchedule)
    master_seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class IRLState:
    """Loop state between rounds: everything needed to continue."""

    iteration: int
    weights: np.ndarray
    t: float
    mu_bar: np.ndarray
    mu_E: np.ndarray
    mu_history: list
    t_history: list


@dataclass
class IterationRecord:
    """Artifacts of one RL round: the weights it trained under, the margin
    those weights realized, and the trained policy's feature expectations."""

    index: int
    weights: np.ndarray
    t: float
    mu: np.ndarray
    policy: object
    extras: dict


@dataclass
class IRLResult:
    """Outcome of a run.

    ``policy``/``weights`` belong to the selected round: the one whose
    feature expectations came closest to the expert's. Later rounds train on
    ever-smaller residual directions and act as probes that refine the
    projection point, so the last round is not in general the best-behaved
    policy; the closest-to-expert round is the algorithm's answer.
    """

    mu_E: np.ndarray
    weights: np.ndarray
    policy: object
    t_history: list
    mu_history: list
    iterations: list
    converged: bool
    degenerate: bool
    selected_iteration: int = 0

    @property
    def final_iteration(self):
        return self.iterations[-1] if self.iterations else None


def project_mu_bar(mu_bar_prev, mu_prev, mu_E) -> np.ndarray:
    """Move the projection point to the foot of mu_E's orthogonal projection
    onto the line through mu_bar_prev and mu_prev (no clamping)."""
    mu_bar_prev = np.asarray(mu_bar_prev, dtype=float)
    direction = np.asarray(mu_prev, dtype=float) - mu_bar_prev
    denom = float(direction @ direction)
    if np.linalg.norm(direction) <= 1e-12:
        raise DegenerateProjectionError("mu of new policy equals current mu_bar")
    scale = float(direction @ (np.asarray(mu_E, dtype=float) - mu_bar_prev)) / denom
    return mu_bar_prev + scale * direction


def update_weights(mu_E, mu_bar):
    """Residual weight vector and its l2 norm (the margin t)."""
    w = np.asarray(mu_E, dtype=float) - np.asarray(mu_bar, dtype=float)
    return w, float(np.linalg.norm(w))


def round_seed(master_seed: int, round_index: int) -> int:
    """Stateless per-round seed; round 0 is the random-policy baseline."""
    ss = np.random.SeedSequence([int(master_seed), int(round_index)])
    return int(ss.generate_state(1, np.uint64)[0])


def init_irl(mu_E, config: IRLConfig, solver) -> IRLState:
    """Start the loop: estimate the random policy's feature expectations,
    set the first weight vector to the expert residual."""
    mu_E = np.asarray(mu_E, dtype=float)
    mu0 = solver.random_policy_mu(round_seed(config.master_seed, 0))
    w, t = update_weights(mu_E, mu0)
    return IRLState(
        iteration=1, weights=w, t=t, mu_bar=mu0.copy(), mu_E=mu_E,
        mu_history=[mu0], t_history=[t],
    )


def run_projection_loop(mu_E, config: IRLConfig, solver, state: IRLState | None = None,
                        log=None) -> IRLResult:
    """Iterate train / estimate / project until the margin drops below
    epsilon_stop or max_iterations RL rounds have run.

    A degenerate projection stops the loop gracefully and flags the result.
    Passing a previously saved state resumes the run mid-stream.
    """
    if state is None:
        state = init_irl(mu_E, config, solver)
    mu_E = state.mu_E
    iterations: list[IterationRecord] = []
    converged = state.t <= config.epsilon_stop
    degenerate = False
    while not converged and state.iteration <= config.max_iterations:
        k = state.iteration
        policy, mu, extras = solver.solve(state.weights, round_seed(config.master_seed, k))
        iterations.append(
            IterationRecord(index=k, weights=state.weights.copy(), t=state.t,
                            mu=mu, policy=policy, extras=extras)
        )
        state.mu_history.append(mu)
        if k >= config.max_iterations:
            state.iteration = k + 1
            break
        try:
            state.mu_bar = project_mu_bar(state.mu_bar, mu, mu_E)
        except DegenerateProjectionError:
            degenerate = True
            state.iteration = k + 1
            break
        w, t = update_weights(mu_E, state.mu_bar)
        if log is not None and t > state.t + 1e-9:
            log(f"margin increased at round {k}: {state.t:.6g} -> {t:.6g}")
        state.weights, state.t = w, t
        state.t_history.append(t)
        state.iteration = k + 1
        converged = t <= config.epsilon_stop
    best = None
    for rec in iterations:
        distance = float(np.linalg.norm(mu_E - rec.mu))
        if best is None or distance < best[0]:
            best = (distance, rec)
    return IRLResult(
        mu_E=mu_E,
        weights=best[1].weights if best else state.weights,
        policy=best[1].policy if best else None,
        t_history=list(state.t_history),
        mu_history=list(state.mu_history),
        iterations=iterations,
        converged=converged,
        degenerate=degenerate,
        selected_iteration=best[1].index if best else 0,
    )


def demo_feature_expectations(demos, gamma: float, cfg: WorldConfig) -> np.ndarray:
    """Empirical expert feature expectations: the mean discounted feature sum
    over all demonstration trajectories."""
    if not demos:
        raise ValueError("at least one demonstration is required")
    total = np.zeros(cfg.feature_dim)
    for demo in demos:
        phis = [phi_from_bins(b, cfg) for b in demo.bins]
        total += discounted_feature_sum(phis, gamma)
    return total / len(demos)


class DQNSolver:
    """RL backend for the highway world.

    With warm_start (the default schedule) one trainer persists across
    rounds — the network keeps updating, the replay buffer and exploration
    schedule continue, and replayed rewards are relabeled under each round's
    weight vector — so the full run is one continuous training stream whose
    objective drifts with the projection loop. Without warm_start every
    round trains a fresh network for its weight vector.

    When the demonstration scenario seeds are supplied, every feature
    expectation (including the reference-policy baseline) is estimated on
    exactly those scenarios, pairing the estimates with the expert's and
    cancelling scenario-composition noise out of the projection residual.
    """

    def __init__(self, cfg: WorldConfig | None = None, schedule: TrainSchedule | None = None,
                 rollouts_per_mu: int = 50, gamma: float = 0.9, scenario_seeds=None):
        self.cfg = cfg or WorldConfig()
        self.schedule = replace(schedule or TrainSchedule(), gamma=gamma)
        self.rollouts_per_mu = rollouts_per_mu
        self.gamma = gamma
        self.scenario_seeds = list(scenario_seeds) if scenario_seeds is not None else None
        self._trainer = None

    def _estimate_mu(self, policy, seed: int) -> np.ndarray:
        return estimate_feature_expectations(
            policy, HighwayEnv(self.cfg), self.rollouts_per_mu, self.gamma, seed,
            scenario_seeds=self.scenario_seeds,
        )

    def random_policy_mu(self, seed: int) -> np.ndarray:
        return self._estimate_mu(DriftPolicy(), seed)

    def solve(self, w, seed: int):
        # Train on the unit direction: the greedy policy is invariant to
        # positive reward scaling, and a fixed scale keeps one learning-rate
        # setting valid while ||w|| shrinks over the rounds.
        w = np.asarray(w, dtype=float)
        norm = np.linalg.norm(w)
        w_train = w / norm if self.schedule.normalize_reward and norm > 0 else w
        if self.schedule.warm_start and self._trainer is not None:
            self._trainer.set_weights(w_train)
            self._trainer.run()
            trainer = self._trainer
        else:
            trainer = DQNTrainer(w_train, HighwayEnv(self.cfg), self.schedule, seed)
            trainer.run()
            if self.schedule.warm_start:
                self._trainer = trainer
        params = trainer.params.copy()
        policy = GreedyQPolicy(params)
        mu_seed = int(np.random.SeedSequence([seed, 1]).generate_state(1, np.uint64)[0])
        mu = self._estimate_mu(policy, mu_seed)
        return policy, mu, {"params": params}


class ExactSolver:
    """Oracle backend: value iteration and closed-form feature expectations
    on a tabular MDP. Seeds are ignored; everything is exact."""

    def __init__(self, mdp, vi_tol: float = 1e-12):
        self.mdp = mdp
        self.vi_tol = vi_tol

    def random_policy_mu(self, seed: int) -> np.ndarray:
        return tabular.exact_feature_expectations(self.mdp, tabular.uniform_policy(self.mdp))

    def solve(self, w, seed: int):
        q, policy = tabular.value_iteration(self.mdp, w, self.vi_tol)
        mu = tabular.exact_feature_expectations(self.mdp, policy)
        return policy, mu, {"q": q}


def run_irl(demos, config: IRLConfig, solver=None, cfg: WorldConfig | None = None,
            log=None) -> IRLResult:
    """Recover reward weights from highway demonstrations with the DQN backend
    (or any solver implementing random_policy_mu/solve)."""
    cfg = cfg or WorldConfig()
    if solver is None:
        solver = DQNSolver(
            cfg, config.dqn_schedule, config.rollouts_per_mu, config.gamma,
            scenario_seeds=[d.seed for d in demos],
        )
    mu_E = demo_feature_expectations(demos, config.gamma, cfg)
    return run_projection_loop(mu_E, config, solver, log=log)


def run_irl_exact(mdp, expert_policy, config: IRLConfig) -> IRLResult:
    """Run the loop against a tabular oracle with an exact expert.

    The expert's feature expectations are computed in closed form, the RL
    step is value iteration, and mu estimates are exact; the MDP's own
    discount factor governs everything.
    """
    mu_E = tabular.exact_feature_expectations(mdp, expert_policy)
    return run_projection_loop(mu_E, config, ExactSolver(mdp))


class ProjectionIRL(BaseEstimator):
    """Recover linear reward weights from driving demonstrations.

    scikit-learn-style estimator around the projection loop: ``fit`` takes a
    list of demonstrations, learned attributes carry the recovered weights,
    margin history, and final greedy policy, and ``predict`` maps feature
    vectors to greedy steering actions.

    Parameters
    ----------
    epsilon_stop : margin threshold that terminates the loop early.
    max_iterations : RL training rounds (each of schedule.inner_iterations steps).
    rollouts_per_mu : Monte Carlo rollouts per feature-expectation estimate.
    gamma : discount factor for rewards and feature expectations.
    master_seed : seed from which all round seeds derive.
    schedule : optional TrainSchedule for the network trainer.
    world_config : optional WorldConfig override.
    solver : optional explicit solver backend (overrides schedule/world_config).
    """

    def __init__(self, epsilon_stop=0.1, max_iterations=6, rollouts_per_mu=50,
                 gamma=0.9, master_seed=0, schedule=None, world_config=None, solver=None):
        self.epsilon_stop = epsilon_stop
        self.max_iterations = max_iterations
        self.rollouts_per_mu = rollouts_per_mu
        self.gamma = gamma
        self.master_seed = master_seed
        self.schedule = schedule
        self.world_config = world_config
        self.solver = solver

    def _config(self) -> IRLConfig:
        return IRLConfig(
            epsilon_stop=self.epsilon_stop,
            max_iterations=self.max_iterations,
            rollouts_per_mu=self.rollouts_per_mu,
            gamma=self.gamma,
            dqn_schedule=self.schedule or TrainSchedule(),
            master_seed=self.master_seed,
        )

    def fit(self, demos, y=None):
        """Run the full loop on a non-empty list of demonstrations."""
        cfg = self.world_config or WorldConfig()
        self.result_ = run_irl(list(demos), self._config(), self.solver, cfg)
        self.weights_ = self.result_.weights
        self.t_history_ = self.result_.t_history
        self.mu_history_ = self.result_.mu_history
        self.policy_ = self.result_.policy
        self.n_features_in_ = cfg.feature_dim
        return self

    def predict(self, X):
        """Greedy steering ordinals for rows of feature vectors."""
        check_is_fitted(self, "policy_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self.policy_.predict(X)
