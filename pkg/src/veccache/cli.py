"""Command line entry points: train, eval, solve, sweep, gen-trace, inspect."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import caching, harness, ledger
from .agent import load_checkpoint
from .config import ConfigError, load_config


def _load_cfg(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_train(args):
    cfg = _load_cfg(args)
    result = harness.run_experiment(cfg, args.policy, out_dir=args.out)
    final = result.metrics.cumulative_average[-1] if result.metrics.cumulative_average else 0.0
    print(f"policy={args.policy} episodes={len(result.metrics.episode_rewards)} "
          f"cum_avg_reward={final:.4f} "
          f"converged_reward={result.metrics.converged_reward():.4f} "
          f"converged_success={result.metrics.converged_success():.2f}%")
    if args.out:
        print(f"artifacts written to {args.out}")
    return 0


def cmd_eval(args):
    cfg = _load_cfg(args)
    if args.policy == "drl":
        if not args.checkpoint:
            print("eval with --policy drl needs --checkpoint", file=sys.stderr)
            return 2
        agent = load_checkpoint(args.checkpoint, cfg.agent)
        env = harness.CachingEnv(cfg)
        rewards = []
        successes = []
        from .refine import refine
        for episode in range(args.episodes):
            state = env.reset(episode)
            ep = []
            for _t in range(cfg.agent.steps_per_episode):
                action = agent.act(state, explore=False)
                assignment = refine(action, env.problem, cfg.agent.zero_threshold)
                r, state = env.step(assignment)
                ep.append(r)
            rewards.append(float(np.mean(ep)))
        env.flush()
        successes = env.success_pct
        print(f"episodes={args.episodes} mean_reward={np.mean(rewards):.4f} "
              f"mean_success={np.mean(successes):.2f}%")
        return 0
    cfg = replace(cfg, agent=replace(cfg.agent, episodes=args.episodes))
    result = harness.run_experiment(cfg, args.policy, out_dir=args.out)
    print(f"policy={args.policy} mean_reward={np.mean(result.metrics.episode_rewards):.4f} "
          f"mean_success={np.mean(result.metrics.success_pct):.2f}%")
    return 0


def cmd_solve(args):
    with open(args.instance, encoding="utf-8") as fh:
        problem = caching.problem_from_json(fh.read())
    exact, value = caching.solve_exact(problem)
    greedy = caching.gcc(problem)
    doc = {
        "exact": {"assignment": exact.x.tolist(), "utility": value},
        "gcc": {"assignment": greedy.x.tolist(),
                "utility": caching.utility(problem, greedy)},
    }
    text = json.dumps(doc, indent=2)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_sweep(args):
    cfg = _load_cfg(args)
    values = [float(v) for v in args.values.split(",") if v]
    header, rows = harness.sweep(cfg, args.axis, values)
    text = harness.sweep_csv(header, rows)
    if args.out:
        os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"sweep table written to {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_gen_trace(args):
    cfg = _load_cfg(args)
    harness.generate_synthetic_trace(cfg, args.out, args.vehicles, args.duration,
                                     args.dt)
    print(f"trace with {args.vehicles} vehicles over {args.duration}s "
          f"written to {args.out}")
    return 0


def cmd_inspect(args):
    with open(args.chain, "rb") as fh:
        chain = ledger.Chain.load(fh.read())
    if args.block is not None:
        if not 0 <= args.block < len(chain.blocks):
            print(f"block {args.block} out of range (chain has {len(chain.blocks)})",
                  file=sys.stderr)
            return 2
        print(json.dumps(chain.blocks[args.block].to_dict(), indent=2))
    else:
        doc = {
            "length": len(chain.blocks),
            "valid": chain.revalidate(),
            "blocks": [b.to_dict() for b in chain.blocks],
        }
        print(json.dumps(doc, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="veccache",
        description="V2V content caching simulator with a learning agent and a "
                    "utility-scored permissioned ledger")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="scenario config JSON")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("train", help="run a full experiment under one policy")
    common(p)
    p.add_argument("--policy", choices=harness.POLICIES, default="drl")
    p.add_argument("--out", default=None, help="directory for metrics and artifacts")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a policy without training")
    common(p)
    p.add_argument("--policy", choices=harness.POLICIES, default="drl")
    p.add_argument("--checkpoint", default=None, help="agent checkpoint for --policy drl")
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("solve", help="exactly solve a serialized instance")
    p.add_argument("--instance", required=True, help="instance JSON file")
    p.add_argument("--out", default=None, help="write the solution JSON here")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="sweep one axis and emit a CSV table")
    common(p)
    p.add_argument("--axis", choices=("requesters", "block_size", "leader_distance"),
                   required=True)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gen-trace", help="emit a synthetic position trace CSV")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--vehicles", type=int, default=100)
    p.add_argument("--duration", type=float, default=600.0)
    p.add_argument("--dt", type=float, default=1.0)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("inspect", help="print a chain dump as JSON")
    p.add_argument("--chain", required=True, help="chain.bin produced by train")
    p.add_argument("--block", type=int, default=None, help="single block index")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"file not found: {exc.filename}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
