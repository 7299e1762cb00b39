"""Command line: ``run <preset>``, ``aggregate <dir>``, ``list-presets``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import harness


def _parse_set(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise harness.UsageError(f"--set expects key=value, got {item!r}")
        key = key.strip()
        out[key[len("agent."):] if key.startswith("agent.") else key] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qmle", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run every (agent, seed) cell of a preset")
    r.add_argument("preset")
    r.add_argument("--seeds", help="comma-separated seed list")
    r.add_argument("--steps", type=int)
    r.add_argument("--eval-interval", type=int)
    r.add_argument("--eval-episodes", type=int, default=10)
    r.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override an agent config field (repeatable)")
    r.add_argument("--config", help="key=value config file with [run] and [agent] sections")
    r.add_argument("--out", help="output root (default: $QMLE_OUT or ./runs)")
    r.add_argument("--jobs", type=int, default=1, help="cells to run in parallel processes")
    r.add_argument("--timing", action="store_true", help="record wall-clock ms (breaks byte-identity)")
    a = sub.add_parser("aggregate", help="mean +- stderr curves and a final-window summary")
    a.add_argument("directory")
    a.add_argument("--final-window", type=int, default=3)
    sub.add_parser("list-presets", help="show preset names and descriptions")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "list-presets":
            for p in harness.PRESETS.values():
                print(f"{p.name:18s} {p.description}")
            return 0
        if args.command == "aggregate":
            summary = harness.aggregate(args.directory, args.final_window)
            for agent, s in summary.items():
                print(f"{agent:28s} {s['mean']:+.4f} +- {s['stderr']:.4f} ({s['seeds']} seeds)")
            return 0
        file_cfg = harness.read_config_file(args.config) if args.config else {"overrides": {}}
        overrides = {**file_cfg["overrides"], **_parse_set(args.set)}
        seeds = args.seeds or file_cfg.get("seeds")
        run_cfg = harness.make_run_config(
            args.preset,
            seeds=[int(s) for s in seeds.split(",")] if seeds else None,
            steps=args.steps or (int(file_cfg["steps"]) if "steps" in file_cfg else None),
            eval_interval=args.eval_interval or (int(file_cfg["eval_interval"])
                                                 if "eval_interval" in file_cfg else None),
            out=args.out or file_cfg.get("out"),
            overrides=overrides,
            eval_episodes=args.eval_episodes,
            timing=args.timing,
            jobs=args.jobs,
        )
    except (harness.UsageError, KeyError, ValueError) as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        harness.run(run_cfg)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {run_cfg.out_dir / run_cfg.preset}")
    return 0
