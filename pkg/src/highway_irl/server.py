"""Socket session server for interactive demonstration recording and
trained-policy playback.

Protocol: newline-delimited JSON over TCP, one interactive session at a
time, server-authoritative simulation at a fixed tick rate (default 20 Hz).

Client -> server messages::

    {"type": "start", "version": 1, "seed": <int>,
     "source": "human"|"scripted" (optional, default "human"),
     "lockstep": true|false (optional, default false)}
    {"type": "action", "ordinal": 0|1|2, "step": <int>}   one per tick
    {"type": "save"}
    {"type": "reset"}
    {"type": "playback", "version": 1, "checkpoint": <path>, "seed": <int>}

Server -> client::

    {"type": "hello", "version": 1}           on connect
    {"type": "state", "step": n, "ego": {x, y, theta, v},
     "obstacles": [{x, y, length, width}, ...],
     "readings": [13 floats], "terminal": "none"|...}
    {"type": "saved", "path": ...} / {"type": "ok"} / {"type": "error", ...}
    {"type": "playback_end"}

Rules: a tick with no action message repeats the last action (initially 0);
in lockstep mode the server instead waits for the client's action, which
scripted clients use for deterministic pacing. A malformed line draws an
error reply and resets the session; an invalid ordinal draws an error reply
and the session continues; an action for the wrong step is logged and
ignored. Messages with a missing or unknown version are rejected before any
state changes. Nothing is written to disk except on an explicit save, and a
file is only written if it passes the same replay validation that ingestion
applies.
"""

from __future__ import annotations

import datetime
import json
import logging
import os
import queue
import socket
import threading
import time

import numpy as np

from .dqn import GreedyQPolicy
from .expert import Demonstration, validate_replay
from .features import HighwayEnv
from .world import Terminal, WorldConfig

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
LOCKSTEP_TIMEOUT = 30.0

_MALFORMED = object()


def _reader(conn_file, inbox: queue.Queue):
    for line in conn_file:
        line = line.strip()
        if not line:
            continue
        try:
            msg = json.loads(line)
            if not isinstance(msg, dict):
                raise ValueError("not an object")
        except ValueError:
            inbox.put(_MALFORMED)
            continue
        inbox.put(msg)
    inbox.put(None)


class SessionServer:
    """Single-session simulator server; see module docstring for protocol."""

    def __init__(self, port: int = 0, cfg: WorldConfig | None = None, out_dir: str = ".",
                 host: str = "127.0.0.1", tick_hz: float = 20.0):
        self.cfg = cfg or WorldConfig()
        self.out_dir = out_dir
        self.tick_period = 1.0 / tick_hz
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen(1)
        self.port = self._listener.getsockname()[1]
        self._running = True

    def shutdown(self):
        self._running = False
        try:
            self._listener.close()
        except OSError:
            pass

    def serve_forever(self):
        log.info("session server listening on port %d", self.port)
        while self._running:
            try:
                conn, addr = self._listener.accept()
            except OSError:
                break
            log.info("session from %s", addr)
            try:
                _Session(self, conn).run()
            except (BrokenPipeError, ConnectionResetError):
                log.info("client disconnected")
            finally:
                try:
                    conn.close()
                except OSError:
                    pass


class _Session:
    def __init__(self, server: SessionServer, conn: socket.socket):
        self.server = server
        self.cfg = server.cfg
        self.conn = conn
        self.inbox: queue.Queue = queue.Queue()
        self.writer = conn.makefile("w", encoding="utf-8")
        reader = threading.Thread(
            target=_reader, args=(conn.makefile("r", encoding="utf-8"), self.inbox), daemon=True
        )
        reader.start()
        self._clear()

    # -- session state -----------------------------------------------------

    def _clear(self):
        self.env = None
        self.seed = None
        self.source = "human"
        self.lockstep = False
        self.observations = []
        self.actions = []
        self.last_action = 0
        self.pending_action = None
        self.terminal = Terminal.NONE
        self.playback_policy = None

    @property
    def recording(self) -> bool:
        return self.env is not None and self.playback_policy is None

    @property
    def step_index(self) -> int:
        return len(self.actions)

    # -- plumbing ------------------------------------------------------------

    def send(self, msg: dict):
        self.writer.write(json.dumps(msg) + "\n")
        self.writer.flush()

    def send_error(self, message: str):
        self.send({"type": "error", "message": message})

    def send_state(self, obs):
        scenario = obs.scenario
        ego = scenario.ego
        self.send({
            "type": "state",
            "step": scenario.step,
            "ego": {"x": ego.x, "y": ego.y, "theta": ego.theta, "v": ego.v},
            "obstacles": [
                {"x": ob.x, "y": ob.y(self.cfg),
                 "length": self.cfg.vehicle_length, "width": self.cfg.vehicle_width}
                for ob in scenario.obstacles
            ],
            "readings": [float(r) for r in obs.readings],
            "terminal": self.env.terminal.value if self.env else Terminal.NONE.value,
        })

    # -- main loop -----------------------------------------------------------

    def run(self):
        self.send({"type": "hello", "version": PROTOCOL_VERSION})
        next_tick = None
        while True:
            active = self.env is not None and self.terminal is Terminal.NONE
            lockstep_wait = active and self.lockstep and self.playback_policy is None
            if not active:
                timeout = None
            elif lockstep_wait:
                timeout = LOCKSTEP_TIMEOUT
            else:
                timeout = max(0.0, next_tick - time.monotonic())
            try:
                msg = self.inbox.get(timeout=timeout)
            except queue.Empty:
                if lockstep_wait:
                    # Lockstep client stopped answering: drop the session.
                    return
                msg = queue.Empty
            if msg is None:
                # Disconnect: discard the session, never write a partial file.
                return
            if msg is _MALFORMED:
                self.send_error("malformed message; session reset")
                self._clear()
                continue
            if msg is not queue.Empty and self.handle_message(msg):
                next_tick = time.monotonic() + self.server.tick_period
            if self.env is None or self.terminal is not Terminal.NONE:
                continue
            if self.lockstep and self.playback_policy is None:
                # Lockstep: step the instant the client's action is in.
                if self.pending_action is not None:
                    self.tick()
            elif time.monotonic() >= next_tick:
                self.tick()
                next_tick += self.server.tick_period

    def tick(self):
        if self.playback_policy is not None:
            action = self.playback_policy.act(self.observations[-1])
        else:
            action = self.pending_action if self.pending_action is not None else self.last_action
        self.pending_action = None
        self.last_action = action
        obs, done = self.env.step(action)
        self.terminal = self.env.terminal
        self.observations.append(obs)
        if self.playback_policy is None:
            self.actions.append(int(action))
        self.send_state(obs)
        if done and self.playback_policy is not None:
            self.send({"type": "playback_end"})
            self._clear()

    # -- message handling ------------------------------------------------

    def handle_message(self, msg: dict) -> bool:
        """Returns True when a new session (recording or playback) started."""
        kind = msg.get("type")
        if kind == "start":
            return self.handle_start(msg)
        if kind == "playback":
            return self.handle_playback(msg)
        if kind == "action":
            self.handle_action(msg)
        elif kind == "save":
            self.handle_save()
        elif kind == "reset":
            self._clear()
            self.send({"type": "ok"})
        else:
            self.send_error(f"unknown message type {kind!r}")
        return False

    def _check_version(self, msg) -> bool:
        if msg.get("version") != PROTOCOL_VERSION:
            self.send_error(f"unsupported protocol version {msg.get('version')!r}")
            return False
        return True

    def handle_start(self, msg) -> bool:
        if not self._check_version(msg):
            return False
        seed = msg.get("seed")
        if not isinstance(seed, int):
            self.send_error("start requires an integer seed")
            return False
        source = msg.get("source", "human")
        if source not in ("human", "scripted"):
            self.send_error("source must be 'human' or 'scripted'")
            return False
        self._clear()
        self.seed = seed
        self.source = source
        self.lockstep = bool(msg.get("lockstep", False))
        self.env = HighwayEnv(self.cfg)
        obs = self.env.reset(seed)
        self.observations = [obs]
        self.send_state(obs)
        return True

    def handle_playback(self, msg) -> bool:
        if not self._check_version(msg):
            return False
        from . import persist

        path = msg.get("checkpoint")
        try:
            data = persist.read_checkpoint(path)
        except (OSError, persist.PersistError, TypeError) as exc:
            self.send_error(f"cannot load checkpoint: {exc}")
            return False
        self._clear()
        self.playback_policy = GreedyQPolicy(data["params"])
        self.seed = int(msg.get("seed", 0))
        self.env = HighwayEnv(self.cfg)
        obs = self.env.reset(self.seed)
        self.observations = [obs]
        self.send_state(obs)
        return True

    def handle_action(self, msg):
        if not self.recording:
            self.send_error("no recording session is active")
            return
        ordinal = msg.get("ordinal")
        if ordinal not in (0, 1, 2):
            self.send_error(f"invalid action ordinal {ordinal!r}")
            return
        step = msg.get("step")
        if step is not None and step != self.step_index:
            log.warning("action for step %s arrived at step %d; ignored", step, self.step_index)
            return
        if self.terminal is not Terminal.NONE:
            self.send_error("episode already terminal")
            return
        self.pending_action = int(ordinal)

    def handle_save(self):
        from . import persist

        if not self.recording or not self.observations:
            self.send_error("nothing to save")
            return
        recorded_at = (
            None
            if self.source == "scripted"
            else datetime.datetime.now(datetime.timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
        )
        demo = Demonstration(
            seed=self.seed,
            states=[o.scenario.ego for o in self.observations],
            actions=list(self.actions),
            bins=np.stack([o.bins for o in self.observations]),
            cfg=self.cfg,
            source=self.source,
            recorded_at=recorded_at,
        )
        try:
            validate_replay(demo)
        except ValueError as exc:
            self.send_error(f"refusing to save: {exc}")
            return
        os.makedirs(self.server.out_dir, exist_ok=True)
        path = os.path.join(self.server.out_dir, f"session_{self.seed}.traj")
        persist.write_trajectory(path, demo)
        self.send({"type": "saved", "path": path})
