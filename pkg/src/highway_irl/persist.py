"""Versioned, portable text serialization for every durable artifact.

All formats are line-oriented plain text, self-describing (a leading magic
token plus version, shapes declared before data), and platform-independent:
floats are written with 17 significant digits, which round-trips IEEE doubles
losslessly. Readers reject unknown versions before interpreting anything
else, validate declared lengths, and fail loudly on truncation.

Formats
-------
trajfile 1      one recorded episode: config snapshot + hash, seed, source,
                then one record per timestep (step, x, y, theta, action,
                13 sensor bins; the final record carries action -1).
qcheckpoint 1   network parameters with declared layer shapes, optionally the
                optimizer moments, RNG state, and a full trainer section
                (reward weights, replay records, live scenario, counters)
                for exact mid-run resumption.
irlstate 1      outer-loop state between rounds for continuation.
manifest (json) run summary written by the train command.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

import numpy as np

from .dqn import LAYER_NAMES, NetworkParams
from .expert import Demonstration
from .irl import IRLState
from .world import Obstacle, Scenario, VehicleState, WorldConfig

TRAJECTORY_VERSION = 1
CHECKPOINT_VERSION = 1
IRLSTATE_VERSION = 1


class PersistError(ValueError):
    """Base class for serialization failures."""


class VersionError(PersistError):
    """File declares a format version this build does not understand."""


class CorruptFileError(PersistError):
    """Truncated file or content inconsistent with its declarations."""


class ConfigMismatchError(PersistError):
    """Embedded world config does not match the active one."""


def fmt(x: float) -> str:
    """Lossless decimal text for a double (17 significant digits)."""
    return format(float(x), ".17g")


def config_to_string(cfg: WorldConfig) -> str:
    parts = []
    for f in sorted(dataclasses.fields(cfg), key=lambda f: f.name):
        value = getattr(cfg, f.name)
        text = fmt(value) if isinstance(value, float) else str(value)
        parts.append(f"{f.name}={text}")
    return " ".join(parts)


def config_from_string(text: str) -> WorldConfig:
    kwargs = {}
    types = {f.name: f.type for f in dataclasses.fields(WorldConfig)}
    for part in text.split():
        name, raw = part.split("=", 1)
        if name not in types:
            raise CorruptFileError(f"unknown config field {name!r}")
        kwargs[name] = int(raw) if types[name] == "int" else float(raw)
    return WorldConfig(**kwargs)


def config_hash(cfg: WorldConfig) -> str:
    return hashlib.sha256(config_to_string(cfg).encode()).hexdigest()[:16]


class _LineReader:
    """Sequential token-line reader with truncation checking."""

    def __init__(self, text: str, magic: str, supported_version: int):
        self.lines = text.splitlines()
        self.pos = 0
        first = self.next()
        parts = first.split()
        if len(parts) != 2 or parts[0] != magic:
            raise CorruptFileError(f"not a {magic} file")
        if parts[1] != str(supported_version):
            raise VersionError(f"unsupported {magic} version {parts[1]}")

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise CorruptFileError("unexpected end of file")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def expect(self, key: str) -> list[str]:
        parts = self.next().split()
        if not parts or parts[0] != key:
            raise CorruptFileError(f"expected {key!r} line, got {parts[:1]}")
        return parts[1:]

    def expect_end(self):
        if self.next().strip() != "end":
            raise CorruptFileError("missing end marker")


def _write_values(lines: list, values, per_line: int = 8):
    values = np.asarray(values, dtype=float).reshape(-1)
    for i in range(0, len(values), per_line):
        lines.append(" ".join(fmt(v) for v in values[i : i + per_line]))


def _read_values(reader: _LineReader, count: int) -> np.ndarray:
    out = []
    while len(out) < count:
        out.extend(float(tok) for tok in reader.next().split())
    if len(out) != count:
        raise CorruptFileError(f"expected {count} values, got {len(out)}")
    return np.array(out)


# ---------------------------------------------------------------------------
# Trajectories


def write_trajectory(path, demo: Demonstration):
    lines = [f"trajfile {TRAJECTORY_VERSION}"]
    lines.append("config " + config_to_string(demo.cfg))
    lines.append("confighash " + config_hash(demo.cfg))
    lines.append(f"seed {demo.seed}")
    lines.append(f"source {demo.source}")
    lines.append(f"recorded {demo.recorded_at or '-'}")
    lines.append(f"steps {len(demo.states)}")
    for i, state in enumerate(demo.states):
        action = demo.actions[i] if i < len(demo.actions) else -1
        bins = " ".join(str(int(b)) for b in demo.bins[i])
        lines.append(f"rec {i} {fmt(state.x)} {fmt(state.y)} {fmt(state.theta)} {action} {bins}")
    lines.append("end")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_trajectory(path) -> Demonstration:
    with open(path, "r", encoding="utf-8") as fh:
        reader = _LineReader(fh.read(), "trajfile", TRAJECTORY_VERSION)
    cfg = config_from_string(" ".join(reader.expect("config")))
    declared_hash = reader.expect("confighash")[0]
    if declared_hash != config_hash(cfg):
        raise CorruptFileError("config hash does not match embedded config")
    seed = int(reader.expect("seed")[0])
    source = reader.expect("source")[0]
    recorded = reader.expect("recorded")[0]
    n = int(reader.expect("steps")[0])
    states, actions, bins = [], [], []
    for i in range(n):
        parts = reader.expect("rec")
        if int(parts[0]) != i:
            raise CorruptFileError(f"record index mismatch at {i}")
        x, y, theta = float(parts[1]), float(parts[2]), float(parts[3])
        action = int(parts[4])
        row = [int(b) for b in parts[5:]]
        if len(row) != cfg.num_sensors:
            raise CorruptFileError(f"record {i} has {len(row)} bins")
        states.append(VehicleState(x, y, theta, cfg.ego_speed))
        bins.append(row)
        if i < n - 1:
            if action not in (0, 1, 2):
                raise CorruptFileError(f"record {i} has invalid action {action}")
            actions.append(action)
    reader.expect_end()
    return Demonstration(
        seed=seed,
        states=states,
        actions=actions,
        bins=np.array(bins, dtype=np.int64),
        cfg=cfg,
        source=source,
        recorded_at=None if recorded == "-" else recorded,
    )


# ---------------------------------------------------------------------------
# Network checkpoints


def write_checkpoint(path, params: NetworkParams, iteration: int = 0,
                     optimizer=None, rng_state: dict | None = None,
                     trainer_snapshot: dict | None = None):
    """Write network parameters; optionally the optimizer moments, RNG state,
    and the full trainer section used for exact resumption."""
    lines = [f"qcheckpoint {CHECKPOINT_VERSION}", f"iteration {iteration}"]
    for name, arr in params.items():
        shape = " ".join(str(s) for s in arr.shape)
        lines.append(f"layer {name} {shape}")
    for name, arr in params.items():
        lines.append(f"tensor {name} {arr.size}")
        _write_values(lines, arr)
    if optimizer is not None:
        lines.append(f"adam {optimizer.t}")
        for prefix, table in (("m", optimizer.m), ("v", optimizer.v)):
            for name in LAYER_NAMES:
                arr = table[name]
                lines.append(f"tensor {prefix}.{name} {arr.size}")
                _write_values(lines, arr)
    if rng_state is not None:
        lines.append("rng " + json.dumps(rng_state, sort_keys=True))
    if trainer_snapshot is not None:
        _write_trainer_section(lines, trainer_snapshot)
    lines.append("end")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_trainer_section(lines: list, snap: dict):
    lines.append("trainer 1")
    lines.append(
        f"counters {snap['env_steps']} {snap['train_steps']} "
        f"{snap.get('hold_action', -1)} {snap.get('hold_remaining', 0)}"
    )
    w = np.asarray(snap["w"])
    lines.append(f"tensor w {w.size}")
    _write_values(lines, w)
    for name in LAYER_NAMES:
        arr = snap["target_params"][name]
        lines.append(f"tensor target.{name} {arr.size}")
        _write_values(lines, arr)
    scenario = snap["scenario"]
    ego = scenario.ego
    lines.append(
        f"scenario {scenario.seed} {scenario.step} "
        f"{fmt(ego.x)} {fmt(ego.y)} {fmt(ego.theta)} {fmt(ego.v)}"
    )
    lines.append(f"obstacles {len(scenario.obstacles)}")
    for ob in scenario.obstacles:
        lines.append(f"obstacle {fmt(ob.x)} {ob.lane} {fmt(ob.speed)}")
    buf = snap["buffer"]
    size = len(buf["actions"])
    lines.append(f"buffer {size} {buf['head']} {buf['capacity']}")
    for i in range(size):
        bins = " ".join(str(int(b)) for b in buf["bins"][i])
        nbins = " ".join(str(int(b)) for b in buf["next_bins"][i])
        t = 1 if buf["terminals"][i] else 0
        lines.append(
            f"brec {int(buf['actions'][i])} {fmt(buf['rewards'][i])} {t} "
            f"{int(buf['steps'][i])} {bins} {nbins}"
        )
    pending = snap.get("pending", [])
    lines.append(f"pending {len(pending)}")
    for p in pending:
        bins = " ".join(str(int(b)) for b in p[0])
        lines.append(f"prec {int(p[1])} {fmt(p[2])} {int(p[3])} {bins}")


def _read_tensor(reader: _LineReader, expect_name: str, shape) -> np.ndarray:
    parts = reader.expect("tensor")
    if parts[0] != expect_name:
        raise CorruptFileError(f"expected tensor {expect_name!r}, got {parts[0]!r}")
    size = int(parts[1])
    expected = int(np.prod(shape)) if shape is not None else size
    if size != expected:
        raise CorruptFileError(
            f"tensor {expect_name} declares {size} values, shape needs {expected}"
        )
    values = _read_values(reader, size)
    return values.reshape(shape) if shape is not None else values


def read_checkpoint(path) -> dict:
    """Parse a checkpoint into a dict: params, iteration, and (when present)
    adam_t/adam_m/adam_v, rng_state, and the trainer snapshot."""
    with open(path, "r", encoding="utf-8") as fh:
        reader = _LineReader(fh.read(), "qcheckpoint", CHECKPOINT_VERSION)
    iteration = int(reader.expect("iteration")[0])
    shapes = {}
    for name in LAYER_NAMES:
        parts = reader.expect("layer")
        if parts[0] != name:
            raise CorruptFileError(f"expected layer {name!r}")
        shapes[name] = tuple(int(s) for s in parts[1:])
    arrays = {name: _read_tensor(reader, name, shapes[name]) for name in LAYER_NAMES}
    out = {"params": NetworkParams(**arrays), "iteration": iteration}
    while True:
        line = reader.next()
        parts = line.split()
        key = parts[0]
        if key == "end":
            break
        if key == "adam":
            out["adam_t"] = int(parts[1])
            out["adam_m"] = {n: _read_tensor(reader, f"m.{n}", shapes[n]) for n in LAYER_NAMES}
            out["adam_v"] = {n: _read_tensor(reader, f"v.{n}", shapes[n]) for n in LAYER_NAMES}
        elif key == "rng":
            out["rng_state"] = json.loads(line.split(" ", 1)[1])
        elif key == "trainer":
            out.update(_read_trainer_section(reader, shapes))
        else:
            raise CorruptFileError(f"unexpected section {key!r}")
    return out


def _read_trainer_section(reader: _LineReader, shapes) -> dict:
    env_steps, train_steps, hold_action, hold_remaining = (
        int(v) for v in reader.expect("counters")
    )
    w = _read_tensor(reader, "w", None)
    target = {n: _read_tensor(reader, f"target.{n}", shapes[n]) for n in LAYER_NAMES}
    sc = reader.expect("scenario")
    seed, step = int(sc[0]), int(sc[1])
    ego = VehicleState(float(sc[2]), float(sc[3]), float(sc[4]), float(sc[5]))
    n_obstacles = int(reader.expect("obstacles")[0])
    obstacles = []
    for _ in range(n_obstacles):
        parts = reader.expect("obstacle")
        obstacles.append(Obstacle(float(parts[0]), int(parts[1]), float(parts[2])))
    scenario = Scenario(ego=ego, obstacles=tuple(obstacles), seed=seed, step=step)
    size, head, capacity = (int(v) for v in reader.expect("buffer"))
    bins, actions, rewards, next_bins, terminals, steps = [], [], [], [], [], []
    for _ in range(size):
        parts = reader.expect("brec")
        actions.append(int(parts[0]))
        rewards.append(float(parts[1]))
        terminals.append(parts[2] == "1")
        steps.append(int(parts[3]))
        rest = [int(b) for b in parts[4:]]
        half = len(rest) // 2
        bins.append(rest[:half])
        next_bins.append(rest[half:])
    n_pending = int(reader.expect("pending")[0])
    pending = []
    for _ in range(n_pending):
        parts = reader.expect("prec")
        pending.append([
            np.array([int(b) for b in parts[3:]], dtype=np.int16),
            int(parts[0]), float(parts[1]), int(parts[2]),
        ])
    return {
        "trainer": {
            "env_steps": env_steps,
            "train_steps": train_steps,
            "hold_action": hold_action,
            "hold_remaining": hold_remaining,
            "pending": pending,
            "w": w,
            "target_params": target,
            "scenario": scenario,
            "buffer": {
                "bins": np.array(bins, dtype=np.int16).reshape(size, -1) if size else np.zeros((0, 13), np.int16),
                "actions": np.array(actions, dtype=np.int8),
                "rewards": np.array(rewards, dtype=float),
                "next_bins": np.array(next_bins, dtype=np.int16).reshape(size, -1) if size else np.zeros((0, 13), np.int16),
                "terminals": np.array(terminals, dtype=bool),
                "steps": np.array(steps, dtype=np.int16),
                "head": head,
                "capacity": capacity,
            },
        }
    }


def trainer_snapshot_from_checkpoint(data: dict) -> dict:
    """Reassemble a DQNTrainer snapshot dict from a parsed checkpoint."""
    required = ("adam_t", "rng_state", "trainer")
    for key in required:
        if key not in data:
            raise CorruptFileError(f"checkpoint lacks the {key} section needed for resume")
    t = data["trainer"]
    return {
        "w": t["w"],
        "params": dict(data["params"].items()),
        "target_params": t["target_params"],
        "adam_t": data["adam_t"],
        "adam_m": data["adam_m"],
        "adam_v": data["adam_v"],
        "rng_state": data["rng_state"],
        "env_steps": t["env_steps"],
        "train_steps": t["train_steps"],
        "hold_action": t.get("hold_action", -1),
        "hold_remaining": t.get("hold_remaining", 0),
        "pending": t.get("pending", []),
        "buffer": t["buffer"],
        "scenario": t["scenario"],
    }


# ---------------------------------------------------------------------------
# IRL loop state


def write_irl_state(path, state: IRLState):
    lines = [f"irlstate {IRLSTATE_VERSION}", f"iteration {state.iteration}", f"t {fmt(state.t)}"]
    d = len(state.mu_E)
    for name, vec in (("weights", state.weights), ("mu_bar", state.mu_bar), ("mu_E", state.mu_E)):
        lines.append(f"tensor {name} {d}")
        _write_values(lines, vec)
    lines.append(f"tensor t_history {len(state.t_history)}")
    _write_values(lines, state.t_history)
    lines.append(f"mu_history {len(state.mu_history)} {d}")
    for mu in state.mu_history:
        _write_values(lines, mu)
    lines.append("end")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_irl_state(path) -> IRLState:
    with open(path, "r", encoding="utf-8") as fh:
        reader = _LineReader(fh.read(), "irlstate", IRLSTATE_VERSION)
    iteration = int(reader.expect("iteration")[0])
    t = float(reader.expect("t")[0])
    weights = _read_tensor(reader, "weights", None)
    mu_bar = _read_tensor(reader, "mu_bar", None)
    mu_E = _read_tensor(reader, "mu_E", None)
    t_history = list(_read_tensor(reader, "t_history", None))
    n, d = (int(v) for v in reader.expect("mu_history"))
    mu_history = [_read_values(reader, d) for _ in range(n)]
    reader.expect_end()
    return IRLState(
        iteration=iteration, weights=weights, t=t, mu_bar=mu_bar, mu_E=mu_E,
        mu_history=mu_history, t_history=t_history,
    )


# ---------------------------------------------------------------------------
# Run manifests


def write_manifest(path, manifest: dict):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
