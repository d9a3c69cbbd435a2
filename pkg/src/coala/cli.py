"""Command-line entry point: ``coala run | replay | rewrite run | env play``."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from coala.agents import load_config, replay, run_batch, run_episode
from coala.errors import CoalaError, HashMismatch, ParseError, StepLimitExceeded
from coala.grounding import GroundingAction, load_world
from coala.lm.parsing import parse
from coala.rewrite import DEFAULT_MAX_STEPS, load_rules
from coala.rewrite import run as rewrite_run


def _cmd_run(args) -> int:
    config = load_config(args.config)
    overrides = {}
    if args.seed is not None:
        if args.seed < 1:
            raise SystemExit("--seed must be positive")
        overrides["seed"] = args.seed
    if args.max_cycles is not None and args.max_cycles < 1:
        raise SystemExit("--max-cycles must be positive")
    if overrides:
        config = replace(config, **overrides)
    if args.parallel > 1 or args.episodes > 1:
        transcripts = run_batch(config, args.episodes, args.log, parallel=args.parallel, max_cycles=args.max_cycles)
    else:
        transcripts = [run_episode(config, args.log, max_cycles=args.max_cycles)]
    for t in transcripts:
        print(json.dumps({"agent": t.header["agent"], "seed": t.header["seed"], **t.footer}, sort_keys=True))
    return 0 if all(t.outcome != "error" for t in transcripts) else 1


def _cmd_replay(args) -> int:
    try:
        report = replay(args.transcript, args.config)
    except HashMismatch as exc:
        print(f"hash mismatch: {exc}", file=sys.stderr)
        return 2
    print(report.summary())
    if not report.match:
        print(json.dumps({"expected": report.expected, "actual": report.actual}, sort_keys=True))
    return 0 if report.match else 1


def _cmd_rewrite(args) -> int:
    rules = load_rules(args.rules)
    try:
        out, trace = rewrite_run(rules, args.input, args.max_steps)
    except StepLimitExceeded as exc:
        print(str(exc), file=sys.stderr)
        return 1
    if args.trace:
        for line in trace.lines():
            print(line)
    print(out)
    return 0


def _loose_action(line: str, env) -> GroundingAction:
    # unknown names still reach the environment so it can answer in text
    try:
        p = parse(line, env.grammar)
        return GroundingAction(p.name, p.arguments)
    except ParseError:
        m = re.match(r"^(?P<name>[^\[]+?)\s*(?:\[(?P<body>.*)\])?$", line)
        if m is None:
            raise
        body = m.group("body")
        return GroundingAction(m.group("name"), [a.strip() for a in body.split(",")] if body else [])


def _cmd_play(args) -> int:
    env = load_world(args.world)
    print(env.reset(args.seed).text)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if line in ("quit", "exit"):
            break
        try:
            obs = env.step(_loose_action(line, env))
        except CoalaError as exc:
            print(f"error: {exc}")
            continue
        print(obs.text)
        if obs.done:
            print(f"[done: {'success' if env.success else 'failure'}, reward {env.episode_reward}]")
            break
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coala", description="Run language agents built from memories and a decision cycle.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log parse failures and other details")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an agent config for one episode (or a batch)")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-cycles", type=int)
    p.add_argument("--log", type=Path, help="directory for the transcript and memory snapshot")
    p.add_argument("--parallel", type=int, default=1, help="worker threads for a batch")
    p.add_argument("--episodes", type=int, default=1, help="batch size; episode i uses seed+i")
    p.set_defaults(fn=_cmd_run)

    p = sub.add_parser("replay", help="re-run a transcript and check it is reproduced exactly")
    p.add_argument("--transcript", required=True, type=Path)
    p.add_argument("--config", required=True, type=Path)
    p.set_defaults(fn=_cmd_replay)

    rw = sub.add_parser("rewrite", help="string rewriting").add_subparsers(dest="rewrite_command", required=True)
    p = rw.add_parser("run", help="apply a rule file to an input string")
    p.add_argument("rules", type=Path)
    p.add_argument("input")
    p.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    p.add_argument("--trace", action="store_true")
    p.set_defaults(fn=_cmd_rewrite)

    env = sub.add_parser("env", help="text environments").add_subparsers(dest="env_command", required=True)
    p = env.add_parser("play", help="play a world file interactively from stdin")
    p.add_argument("world", type=Path)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_play)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except CoalaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
