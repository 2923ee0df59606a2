"""Command line entry point: ``run``, ``sweep``, ``viz`` and ``score``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .harness import ExperimentConfig, run_experiment, run_seed, score_runs, sweep
from .viz import emit_didactic_viz


def parse_override(text: str):
    """``key=value`` where value is JSON when it parses, else a plain string."""
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise ValueError(f"override {text!r} is not of the form key=value")
    try:
        return key, json.loads(value)
    except json.JSONDecodeError:
        return key, value


def _cmd_run(args):
    overrides = dict(parse_override(o) for o in args.override)
    config = ExperimentConfig.from_file(args.config, overrides)
    if args.seed is None:
        results = run_experiment(config)
    else:
        out = os.path.join(config.output_dir, f"seed_{args.seed}")
        results = [run_seed(config, args.seed, out)]
    for r in results:
        print(f"seed {r.summary['seed']}: R={r.summary['R']:.6g} -> {r.run_dir}")


def _cmd_sweep(args):
    with open(args.config) as f:
        grid = json.load(f)
    scores = sweep(grid, args.output_dir)
    for label, score in sorted(scores.items(), key=lambda kv: -kv[1]):
        print(f"{score:.4f}  {label}")


def _cmd_viz(args):
    for path in emit_didactic_viz(args.run_dir, every=args.every):
        print(path)


def _cmd_score(args):
    for label, score in sorted(score_runs(args.runs).items(), key=lambda kv: -kv[1]):
        print(f"{score:.4f}  {label}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ppocma", description="PPO-CMA experiments")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one config (all seeds, or --seed)")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    run.set_defaults(func=_cmd_run)

    sw = sub.add_parser("sweep", help="run or resume a grid sweep and print normalized scores")
    sw.add_argument("--config", required=True)
    sw.add_argument("--output-dir")
    sw.set_defaults(func=_cmd_sweep)

    viz = sub.add_parser("viz", help="write SVG figures for a quadratic-problem run")
    viz.add_argument("--run-dir", required=True)
    viz.add_argument("--every", type=int, default=1, help="draw every n-th iteration")
    viz.set_defaults(func=_cmd_viz)

    score = sub.add_parser("score", help="normalized scores of finished runs")
    score.add_argument("--runs", nargs="+", required=True)
    score.set_defaults(func=_cmd_score)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        args.func(args)
    except Exception as exc:  # one diagnostic line, nonzero exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
