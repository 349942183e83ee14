"""Command-line entry points.

Subcommands: ``record`` (scripted-expert demonstrations), ``train`` (the
full reward-recovery loop, neural or exact), ``evaluate`` (behavioral report
for a trained checkpoint), and ``serve`` (the interactive session server).
Every command is deterministic given its flags; all randomness flows from
--seed. Exit codes: 0 success, 2 usage error, 3 the run stopped on a
degenerate projection, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

from . import evaluate, expert, persist, tabular
from .dqn import GreedyQPolicy, TrainSchedule
from .irl import DQNSolver, ExactSolver, IRLConfig, demo_feature_expectations, run_projection_loop
from .world import WorldConfig

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DEGENERATE = 3


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _build_irl_config(args, file_cfg: dict) -> IRLConfig:
    schedule = TrainSchedule(**file_cfg.get("schedule", {}))
    irl_keys = ("epsilon_stop", "max_iterations", "rollouts_per_mu", "gamma", "master_seed")
    kwargs = {k: file_cfg[k] for k in irl_keys if k in file_cfg}
    for key, flag in (
        ("epsilon_stop", "epsilon_stop"),
        ("max_iterations", "max_iterations"),
        ("rollouts_per_mu", "rollouts_per_mu"),
        ("master_seed", "seed"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            kwargs[key] = value
    if getattr(args, "inner_iterations", None) is not None:
        schedule = dataclasses.replace(schedule, inner_iterations=args.inner_iterations)
    config = IRLConfig(dqn_schedule=schedule, **kwargs)
    schedule.gamma = config.gamma
    return config


def _vector_csv(path, vec):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,value\n")
        for i, v in enumerate(vec):
            fh.write(f"{i},{persist.fmt(v)}\n")


def cmd_record(args) -> int:
    cfg = WorldConfig()
    demos = expert.record_demonstrations(args.n, args.seed, cfg)
    os.makedirs(args.out, exist_ok=True)
    for i, demo in enumerate(demos):
        persist.write_trajectory(os.path.join(args.out, f"demo_{i:05d}.traj"), demo)
    print(f"recorded {len(demos)} demonstrations to {args.out} (seed {args.seed})")
    return EXIT_OK


def _load_demos(demo_dir, cfg: WorldConfig):
    names = sorted(n for n in os.listdir(demo_dir) if n.endswith(".traj"))
    if not names:
        raise FileNotFoundError(f"no .traj files in {demo_dir}")
    return [expert.ingest_demonstration(os.path.join(demo_dir, n), cfg) for n in names]


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    config = _build_irl_config(args, file_cfg)
    os.makedirs(args.out, exist_ok=True)
    if args.rl == "exact":
        return _train_exact(args, config)
    return _train_dqn(args, config)


def _train_exact(args, config: IRLConfig) -> int:
    if not args.env.startswith("toy:"):
        raise ValueError("--rl exact requires --env toy:<name>")
    name = args.env.split(":", 1)[1]
    mdp, planted = tabular.builtin_mdp(name)
    if planted is None:
        raise ValueError(f"fixture {name!r} carries no planted reward weights")
    _, expert_policy = tabular.value_iteration(mdp, planted)
    mu_E = tabular.exact_feature_expectations(mdp, expert_policy)
    result = run_projection_loop(mu_E, config, ExactSolver(mdp))
    iterations = []
    for rec in result.iterations:
        it_dir = os.path.join(args.out, f"iter_{rec.index:02d}")
        os.makedirs(it_dir, exist_ok=True)
        _vector_csv(os.path.join(it_dir, "weights.csv"), rec.weights)
        _vector_csv(os.path.join(it_dir, "mu.csv"), rec.mu)
        with open(os.path.join(it_dir, "policy.txt"), "w", encoding="utf-8") as fh:
            fh.write(" ".join(str(int(a)) for a in rec.policy) + "\n")
        iterations.append({
            "index": rec.index,
            "t": rec.t,
            "weights": f"iter_{rec.index:02d}/weights.csv",
            "mu": f"iter_{rec.index:02d}/mu.csv",
            "policy": f"iter_{rec.index:02d}/policy.txt",
        })
    _vector_csv(os.path.join(args.out, "mu_expert.csv"), mu_E)
    manifest = {
        "format": 1,
        "solver": "exact",
        "environment": args.env,
        "max_iterations": config.max_iterations,
        "epsilon_stop": config.epsilon_stop,
        "master_seed": config.master_seed,
        "gamma": mdp.gamma,
        "t_history": list(result.t_history),
        "iterations": iterations,
        "converged": result.converged,
        "degenerate": result.degenerate,
    }
    persist.write_manifest(os.path.join(args.out, "manifest.json"), manifest)
    print(f"exact run on {name}: t {result.t_history[0]:.4g} -> {result.t_history[-1]:.4g} "
          f"in {len(result.iterations)} iterations")
    return EXIT_DEGENERATE if result.degenerate else EXIT_OK


def _train_dqn(args, config: IRLConfig) -> int:
    cfg = WorldConfig()
    demos = _load_demos(args.demos, cfg)
    mu_E = demo_feature_expectations(demos, config.gamma, cfg)
    solver = DQNSolver(cfg, config.dqn_schedule, config.rollouts_per_mu, config.gamma)
    result = run_projection_loop(mu_E, config, solver)
    iterations = []
    for rec in result.iterations:
        it_dir = os.path.join(args.out, f"iter_{rec.index:02d}")
        os.makedirs(it_dir, exist_ok=True)
        evaluate.write_sensor_table(os.path.join(it_dir, "weights.csv"), rec.weights, cfg)
        evaluate.write_sensor_table(os.path.join(it_dir, "mu.csv"), rec.mu, cfg)
        persist.write_checkpoint(
            os.path.join(it_dir, "checkpoint.txt"), rec.extras["params"], iteration=rec.index
        )
        iterations.append({
            "index": rec.index,
            "t": rec.t,
            "weights": f"iter_{rec.index:02d}/weights.csv",
            "mu": f"iter_{rec.index:02d}/mu.csv",
            "checkpoint": f"iter_{rec.index:02d}/checkpoint.txt",
        })
    evaluate.write_sensor_table(os.path.join(args.out, "mu_expert.csv"), mu_E, cfg)
    manifest = {
        "format": 1,
        "solver": "dqn",
        "environment": "highway",
        "world_config_hash": persist.config_hash(cfg),
        "demo_count": len(demos),
        "max_iterations": config.max_iterations,
        "epsilon_stop": config.epsilon_stop,
        "rollouts_per_mu": config.rollouts_per_mu,
        "gamma": config.gamma,
        "master_seed": config.master_seed,
        "inner_iterations": config.dqn_schedule.inner_iterations,
        "t_history": list(result.t_history),
        "iterations": iterations,
        "converged": result.converged,
        "degenerate": result.degenerate,
    }
    persist.write_manifest(os.path.join(args.out, "manifest.json"), manifest)
    print(f"trained {len(result.iterations)} rounds; t history "
          + " ".join(f"{t:.4g}" for t in result.t_history))
    return EXIT_DEGENERATE if result.degenerate else EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = WorldConfig()
    data = persist.read_checkpoint(args.checkpoint)
    policy = GreedyQPolicy(data["params"])
    mu_E = None
    if args.demos:
        demos = _load_demos(args.demos, cfg)
        mu_E = demo_feature_expectations(demos, args.gamma, cfg)
    report = evaluate.evaluate_policy(policy, args.n, args.seed, cfg, args.gamma, mu_E)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(report.to_text())
        evaluate.write_sensor_table(os.path.join(args.out, "mu_agent.csv"), report.mu_agent, cfg)
        if args.weights:
            w = evaluate.read_sensor_table(args.weights, cfg)
            evaluate.write_sensor_table(os.path.join(args.out, "weights.csv"), w, cfg)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_serve(args) -> int:
    from .server import SessionServer

    logging.basicConfig(level=logging.INFO)
    server = SessionServer(port=args.port, out_dir=args.out, tick_hz=args.tick_hz)
    print(f"listening on port {server.port}; saved sessions go to {args.out}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="highway-irl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("record", help="record scripted-expert demonstrations")
    p.add_argument("--n", type=int, default=90)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", default="demos")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("train", help="run the reward-recovery loop")
    p.add_argument("--demos", default="demos", help="directory of .traj files")
    p.add_argument("--out", default="run")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--rl", choices=("dqn", "exact"), default="dqn")
    p.add_argument("--env", default="highway", help="'highway' or 'toy:<fixture>'")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--max-iterations", dest="max_iterations", type=int, default=None)
    p.add_argument("--epsilon-stop", dest="epsilon_stop", type=float, default=None)
    p.add_argument("--rollouts-per-mu", dest="rollouts_per_mu", type=int, default=None)
    p.add_argument("--inner-iterations", dest="inner_iterations", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="behavioral report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--weights", default=None, help="weights.csv to copy into the report dir")
    p.add_argument("--demos", default=None, help="demo dir for the expert-difference table")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float, default=0.9)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("serve", help="interactive session server for the browser UI")
    p.add_argument("--port", type=int, default=8728)
    p.add_argument("--out", default="demos_human")
    p.add_argument("--tick-hz", dest="tick_hz", type=float, default=20.0)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "evaluate" and args.n < 1:
        parser.error("--n must be >= 1")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, persist.PersistError,
            expert.ExpertMisconfiguredError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
