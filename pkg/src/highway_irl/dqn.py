"""From-scratch Q-network trainer.

A fully connected 208-160-160-3 network with rectifier hidden units and a
linear output head, trained by temporal-difference regression against a
periodically refreshed target copy, with uniform experience replay and an
epsilon-greedy behavior policy. Forward, backward, and the adaptive-moment
optimizer are plain numpy; gradients are validated against central finite
differences in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import phis_from_bin_matrix

LAYER_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")


@dataclass
class NetworkParams:
    """Dense-layer weights and biases for the three-layer Q approximator."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def items(self):
        return [(name, getattr(self, name)) for name in LAYER_NAMES]

    def copy(self) -> "NetworkParams":
        return NetworkParams(**{name: arr.copy() for name, arr in self.items()})

    def validate(self):
        for name, arr in self.items():
            if not np.all(np.isfinite(arr)):
                raise RuntimeError(f"non-finite values in parameter {name}")

    @property
    def sizes(self) -> tuple[int, int, int, int]:
        return (self.w1.shape[0], self.w1.shape[1], self.w2.shape[1], self.w3.shape[1])


def init_params(rng, sizes=(208, 160, 160, 3)) -> NetworkParams:
    """Seeded init: uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases."""
    d_in, h1, h2, d_out = sizes

    def u(fan_in, fan_out):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return NetworkParams(
        w1=u(d_in, h1), b1=np.zeros(h1),
        w2=u(h1, h2), b2=np.zeros(h2),
        w3=u(h2, d_out), b3=np.zeros(d_out),
    )


def forward(params: NetworkParams, phi: np.ndarray) -> np.ndarray:
    """Action values for a single feature vector or a batch of them."""
    phi = np.asarray(phi, dtype=float)
    single = phi.ndim == 1
    x = phi[None, :] if single else phi
    a1 = np.maximum(x @ params.w1 + params.b1, 0.0)
    a2 = np.maximum(a1 @ params.w2 + params.b2, 0.0)
    q = a2 @ params.w3 + params.b3
    return q[0] if single else q


def _forward_cached(params, x):
    z1 = x @ params.w1 + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.w2 + params.b2
    a2 = np.maximum(z2, 0.0)
    q = a2 @ params.w3 + params.b3
    return z1, a1, z2, a2, q


def td_target(r: float, gamma: float, q_next_target, terminal: bool) -> float:
    """Bootstrap target: r at terminal, else r + gamma * max target Q."""
    if terminal:
        return float(r)
    return float(r) + gamma * float(np.max(q_next_target))


def select_action(qvalues, epsilon: float, rng) -> int:
    """Epsilon-greedy over the action values; argmax ties break low."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    q = np.asarray(qvalues, dtype=float)
    if rng.random() < epsilon:
        return int(rng.integers(q.shape[0]))
    return int(np.argmax(q))


@dataclass
class TrainSchedule:
    """Hyperparameters of one training round.

    inner_iterations counts environment steps, each followed by one gradient
    step once the replay buffer holds ``warmup`` transitions.
    """

    inner_iterations: int = 3000
    target_update_period: int = 100
    epsilon_start: float = 1.0
    epsilon_final: float = 0.1
    epsilon_decay_steps: int = 2000
    exploration_hold: int = 1
    gradient_steps: int = 1
    nstep: int = 1
    learning_rate: float = 1e-3
    replay_capacity: int = 10000
    batch_size: int = 32
    warmup: int = 500
    loss: str = "mse"
    huber_delta: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    warm_start: bool = False
    normalize_reward: bool = True
    # Fraction of training episodes drawn with an obstacle ahead in the
    # ego's lane (exploring starts): avoidance situations are the rare,
    # decision-critical part of the ambient scenario distribution, and the
    # trainer may pick its own start states. Feature-expectation estimates
    # always use the ambient distribution.
    focus_fraction: float = 0.0
    focus_max_x: float = 60.0
    gamma: float = 0.9


def epsilon_at(step: int, schedule: TrainSchedule) -> float:
    """Linear decay from epsilon_start to epsilon_final, then constant."""
    if step >= schedule.epsilon_decay_steps:
        return schedule.epsilon_final
    frac = step / schedule.epsilon_decay_steps
    return schedule.epsilon_start + frac * (schedule.epsilon_final - schedule.epsilon_start)


class ReplayBuffer:
    """Ring buffer of transitions stored as compact bin indices; uniform
    sampling with replacement. Oldest entries are evicted first.

    Each record may aggregate several consecutive environment steps (the
    reward column then holds the discounted sum and ``steps`` the horizon of
    the bootstrap); single-step records have steps == 1.
    """

    def __init__(self, capacity: int, n_sensors: int = 13):
        self.capacity = capacity
        self.bins = np.zeros((capacity, n_sensors), dtype=np.int16)
        self.actions = np.zeros(capacity, dtype=np.int8)
        self.rewards = np.zeros(capacity, dtype=float)
        self.next_bins = np.zeros((capacity, n_sensors), dtype=np.int16)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.steps = np.ones(capacity, dtype=np.int16)
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def push(self, bins, action, reward, next_bins, terminal, steps: int = 1):
        i = self.head
        self.bins[i] = bins
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_bins[i] = next_bins
        self.terminals[i] = terminal
        self.steps[i] = steps
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng):
        idx = rng.integers(0, self.size, size=batch_size)
        return (
            self.bins[idx], self.actions[idx], self.rewards[idx],
            self.next_bins[idx], self.terminals[idx], self.steps[idx],
        )


class Adam:
    """Per-parameter adaptive-moment SGD with bias correction."""

    def __init__(self, params: NetworkParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.items()}

    def step(self, params: NetworkParams, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, arr in params.items():
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            arr -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def batch_loss(params: NetworkParams, phis, actions, targets, loss: str = "mse",
               huber_delta: float = 1.0) -> float:
    """Mean TD regression loss over a batch (for checks and diagnostics)."""
    q = forward(params, phis)
    err = q[np.arange(len(actions)), actions] - np.asarray(targets, dtype=float)
    if loss == "mse":
        return float(np.mean(err * err))
    if loss == "huber":
        a = np.abs(err)
        quad = np.minimum(a, huber_delta)
        return float(np.mean(0.5 * quad * quad + huber_delta * (a - quad)))
    raise ValueError(f"unknown loss {loss!r}")


def compute_gradients(params: NetworkParams, phis, actions, targets, loss: str = "mse",
                      huber_delta: float = 1.0):
    """Analytic gradients of the batch TD loss.

    Only the predicted value of the taken action receives gradient; the
    other two output heads contribute nothing.
    """
    x = np.asarray(phis, dtype=float)
    actions = np.asarray(actions, dtype=int)
    targets = np.asarray(targets, dtype=float)
    n = x.shape[0]
    z1, a1, z2, a2, q = _forward_cached(params, x)
    err = q[np.arange(n), actions] - targets
    if loss == "mse":
        loss_value = float(np.mean(err * err))
        derr = 2.0 * err / n
    elif loss == "huber":
        a = np.abs(err)
        quad = np.minimum(a, huber_delta)
        loss_value = float(np.mean(0.5 * quad * quad + huber_delta * (a - quad)))
        derr = np.clip(err, -huber_delta, huber_delta) / n
    else:
        raise ValueError(f"unknown loss {loss!r}")
    dq = np.zeros_like(q)
    dq[np.arange(n), actions] = derr
    grads = {}
    grads["w3"] = a2.T @ dq
    grads["b3"] = dq.sum(axis=0)
    da2 = dq @ params.w3.T
    dz2 = da2 * (z2 > 0.0)
    grads["w2"] = a1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    da1 = dz2 @ params.w2.T
    dz1 = da1 * (z1 > 0.0)
    grads["w1"] = x.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    return grads, loss_value


def numeric_gradient_check(params: NetworkParams, phis, actions, targets, rng,
                           h: float = 1e-5, coords_per_tensor: int = 20,
                           loss: str = "mse") -> float:
    """Max relative error between analytic and central-difference gradients,
    sampled over coords_per_tensor coordinates of every layer tensor."""
    grads, _ = compute_gradients(params, phis, actions, targets, loss)
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        n_coords = min(coords_per_tensor, flat.size)
        coords = rng.choice(flat.size, size=n_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = batch_loss(params, phis, actions, targets, loss)
            flat[c] = orig - h
            down = batch_loss(params, phis, actions, targets, loss)
            flat[c] = orig
            fd = (up - down) / (2.0 * h)
            ana = grads[name].reshape(-1)[c]
            scale = max(abs(fd), abs(ana), 1e-8)
            worst = max(worst, abs(fd - ana) / scale)
    return worst


def update_target(params: NetworkParams) -> NetworkParams:
    """Deep copy: the returned target stays frozen while params train on."""
    return params.copy()


def train_step(params: NetworkParams, target_params: NetworkParams, batch,
               schedule: TrainSchedule, optimizer: Adam, cfg, w=None):
    """One TD regression step on a sampled batch.

    When the reward weights are supplied and the records are single-step,
    rewards are recomputed from the successor features at sample time, so
    replayed experience always carries the reward of the weight vector
    currently being optimized. Returns (params, pre-step loss); params are
    updated in place by the optimizer. Raises on a non-finite loss.
    """
    bins, actions, rewards, next_bins, terminals, steps = batch
    phis = phis_from_bin_matrix(bins, cfg)
    next_phis = phis_from_bin_matrix(next_bins, cfg)
    if w is not None and np.all(steps == 1):
        rewards = next_phis @ np.asarray(w, dtype=float)
    q_next = forward(target_params, next_phis)
    boot = (schedule.gamma ** steps) * q_next.max(axis=1)
    targets = np.where(terminals, rewards, rewards + boot)
    grads, loss_value = compute_gradients(
        params, phis, actions, targets, schedule.loss, schedule.huber_delta
    )
    if not math.isfinite(loss_value):
        raise RuntimeError(f"non-finite training loss: {loss_value}")
    optimizer.step(params, grads)
    return params, loss_value


class GreedyQPolicy:
    """Exploitation-only policy over a frozen parameter snapshot."""

    def __init__(self, params: NetworkParams):
        self.params = params

    def act(self, obs, rng=None) -> int:
        return int(np.argmax(forward(self.params, obs.phi)))

    def predict(self, X) -> np.ndarray:
        """Greedy actions for a batch of feature vectors, ties broken low."""
        return np.argmax(forward(self.params, np.asarray(X, dtype=float)), axis=1)


class DQNTrainer:
    """Stateful training loop; exists as an object so a run can checkpoint
    and resume mid-stream with an identical continuation."""

    def __init__(self, w, env, schedule: TrainSchedule, seed: int, init: NetworkParams | None = None):
        self.w = np.asarray(w, dtype=float)
        if not np.all(np.isfinite(self.w)):
            raise ValueError("reward weights must be finite")
        self.env = env
        self.schedule = schedule
        self.seed = int(seed)
        self.rng = np.random.default_rng(seed)
        sizes = (env.cfg.feature_dim, 160, 160, 3)
        self.params = init.copy() if init is not None else init_params(self.rng, sizes)
        self.params.validate()
        self.target_params = update_target(self.params)
        self.optimizer = Adam(
            self.params, schedule.learning_rate,
            schedule.adam_beta1, schedule.adam_beta2, schedule.adam_eps,
        )
        self.buffer = ReplayBuffer(schedule.replay_capacity, env.cfg.num_sensors)
        self.env_steps = 0
        self.train_steps = 0
        self.hold_action = None
        self.hold_remaining = 0
        # records waiting to span the full bootstrap horizon: [bins, a, R, age]
        self._pending = []
        self.losses = []
        self.obs = self._reset_episode()

    def _reset_episode(self):
        focused = (
            self.schedule.focus_fraction > 0.0
            and self.rng.random() < self.schedule.focus_fraction
        )
        while True:
            obs = self.env.reset(int(self.rng.integers(0, 2**63 - 1)))
            if not focused:
                return obs
            scenario = obs.scenario
            lane = self.env.cfg.nearest_lane(scenario.ego.y)
            for ob in scenario.obstacles:
                if ob.lane == lane and ob.x <= self.schedule.focus_max_x:
                    return obs

    def _behavior_action(self) -> int:
        """Epsilon-greedy with held exploration.

        An exploratory draw is repeated for exploration_hold steps so that
        random steering produces maneuver-shaped excursions instead of
        1-step jitter; hold length 1 recovers plain epsilon-greedy.
        """
        if self.hold_remaining > 0:
            self.hold_remaining -= 1
            return self.hold_action
        eps = epsilon_at(self.env_steps, self.schedule)
        if self.rng.random() < eps:
            self.hold_action = int(self.rng.integers(3))
            self.hold_remaining = self.schedule.exploration_hold - 1
            return self.hold_action
        return int(np.argmax(forward(self.params, self.obs.phi)))

    def _record(self, bins, action, r, next_bins, done):
        """Accumulate the step into the pending multi-step records and push
        every record whose bootstrap horizon is complete (all of them at
        episode end, with no bootstrap)."""
        gamma = self.schedule.gamma
        self._pending.append([bins, action, 0.0, 0])
        for p in self._pending:
            p[2] += (gamma ** p[3]) * r
            p[3] += 1
        if done:
            for p in self._pending:
                self.buffer.push(p[0], p[1], p[2], next_bins, True, p[3])
            self._pending.clear()
        elif len(self._pending) >= self.schedule.nstep:
            p = self._pending.pop(0)
            self.buffer.push(p[0], p[1], p[2], next_bins, False, p[3])

    def run_step(self):
        """One environment step plus (after warmup) one gradient step."""
        a = self._behavior_action()
        nxt, done = self.env.step(a)
        r = float(self.w @ nxt.phi)
        self._record(self.obs.bins, a, r, nxt.bins, done)
        self.obs = nxt
        if done:
            self.obs = self._reset_episode()
            self.hold_remaining = 0
        self.env_steps += 1
        if len(self.buffer) >= self.schedule.warmup:
            for _ in range(self.schedule.gradient_steps):
                batch = self.buffer.sample(self.schedule.batch_size, self.rng)
                relabel = self.w if self.schedule.nstep == 1 else None
                _, loss = train_step(
                    self.params, self.target_params, batch, self.schedule, self.optimizer,
                    self.env.cfg, w=relabel,
                )
                self.losses.append(loss)
                self.train_steps += 1
                if self.train_steps % self.schedule.target_update_period == 0:
                    self.target_params = update_target(self.params)

    def set_weights(self, w):
        """Swap the reward weights mid-run; replayed rewards follow because
        they are relabeled at sample time."""
        w = np.asarray(w, dtype=float)
        if not np.all(np.isfinite(w)):
            raise ValueError("reward weights must be finite")
        self.w = w

    def run(self, n_steps: int | None = None):
        """Run n_steps more environment steps (default: one inner-iteration
        budget)."""
        end = self.env_steps + (self.schedule.inner_iterations if n_steps is None else n_steps)
        while self.env_steps < end:
            self.run_step()
        return self.params, GreedyQPolicy(self.params)

    def snapshot(self) -> dict:
        """Everything needed to continue this run with an identical stream:
        both networks, optimizer moments, RNG state, replay contents, the
        live scenario, and the step counters."""
        b = self.buffer
        return {
            "w": self.w.copy(),
            "params": {name: arr.copy() for name, arr in self.params.items()},
            "target_params": {name: arr.copy() for name, arr in self.target_params.items()},
            "adam_t": self.optimizer.t,
            "adam_m": {name: arr.copy() for name, arr in self.optimizer.m.items()},
            "adam_v": {name: arr.copy() for name, arr in self.optimizer.v.items()},
            "rng_state": self.rng.bit_generator.state,
            "env_steps": self.env_steps,
            "train_steps": self.train_steps,
            "hold_action": -1 if self.hold_action is None else self.hold_action,
            "hold_remaining": self.hold_remaining,
            "pending": [[np.array(p[0]), p[1], p[2], p[3]] for p in self._pending],
            "buffer": {
                "bins": b.bins[: b.size].copy(),
                "actions": b.actions[: b.size].copy(),
                "rewards": b.rewards[: b.size].copy(),
                "next_bins": b.next_bins[: b.size].copy(),
                "terminals": b.terminals[: b.size].copy(),
                "steps": b.steps[: b.size].copy(),
                "head": b.head,
                "capacity": b.capacity,
            },
            "scenario": self.env.scenario,
        }

    @classmethod
    def from_snapshot(cls, env, schedule: TrainSchedule, snap: dict) -> "DQNTrainer":
        trainer = cls.__new__(cls)
        trainer.w = np.asarray(snap["w"], dtype=float)
        trainer.env = env
        trainer.schedule = schedule
        trainer.seed = None
        trainer.rng = np.random.default_rng()
        trainer.rng.bit_generator.state = snap["rng_state"]
        trainer.params = NetworkParams(**{k: v.copy() for k, v in snap["params"].items()})
        trainer.target_params = NetworkParams(
            **{k: v.copy() for k, v in snap["target_params"].items()}
        )
        trainer.optimizer = Adam(
            trainer.params, schedule.learning_rate,
            schedule.adam_beta1, schedule.adam_beta2, schedule.adam_eps,
        )
        trainer.optimizer.t = snap["adam_t"]
        trainer.optimizer.m = {k: v.copy() for k, v in snap["adam_m"].items()}
        trainer.optimizer.v = {k: v.copy() for k, v in snap["adam_v"].items()}
        buf = snap["buffer"]
        trainer.buffer = ReplayBuffer(buf["capacity"], env.cfg.num_sensors)
        size = len(buf["actions"])
        trainer.buffer.bins[:size] = buf["bins"]
        trainer.buffer.actions[:size] = buf["actions"]
        trainer.buffer.rewards[:size] = buf["rewards"]
        trainer.buffer.next_bins[:size] = buf["next_bins"]
        trainer.buffer.terminals[:size] = buf["terminals"]
        trainer.buffer.steps[:size] = buf.get("steps", np.ones(size, dtype=np.int16))
        trainer.buffer.size = size
        trainer.buffer.head = buf["head"]
        trainer.env_steps = snap["env_steps"]
        trainer.train_steps = snap["train_steps"]
        hold = snap.get("hold_action", -1)
        trainer.hold_action = None if hold == -1 else int(hold)
        trainer.hold_remaining = int(snap.get("hold_remaining", 0))
        trainer._pending = [
            [np.array(p[0]), int(p[1]), float(p[2]), int(p[3])]
            for p in snap.get("pending", [])
        ]
        trainer.losses = []
        trainer.obs = env.restore(snap["scenario"])
        return trainer


def train_dqn(w, env, schedule: TrainSchedule, seed: int, init: NetworkParams | None = None):
    """Train a Q-network for the reward w . phi; returns (params, greedy policy).

    Fully deterministic given the seed: network init, exploration, scenario
    seeds, and replay sampling all flow from one generator.
    """
    return DQNTrainer(w, env, schedule, seed, init).run()
