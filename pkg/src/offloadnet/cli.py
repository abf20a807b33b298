"""Command-line entry point: offloadnet {generate,train,eval,report}."""
from __future__ import annotations

import argparse
import logging
import sys

from .harness import (
    POLICIES, ExperimentConfig, HarnessError, cmd_eval, cmd_generate, cmd_report, cmd_train,
    parse_sizes,
)


def _global_flags(default):
    # subcommands repeat the global flags; SUPPRESS keeps them from
    # clobbering values given before the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=default, help="master seed (default 0)")
    common.add_argument("--out", default=default, help="output directory (default runs)")
    common.add_argument("--config", default=default, help="JSON file with experiment settings")
    common.add_argument("-q", "--quiet", action="store_true", default=default or False)
    return common


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="offloadnet", description=__doc__, parents=[_global_flags(None)])
    common = _global_flags(argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write train/test datasets")
    g.add_argument("--train", type=int)
    g.add_argument("--test", type=int)
    g.add_argument("--sizes", help="lo:hi:step or comma list, e.g. 20:60:10")
    g.add_argument("--draws", type=int, help="task draws per instance")

    t = sub.add_parser("train", parents=[common], help="train the GCNN")
    t.add_argument("--data", help="training JSONL (default OUT/train.jsonl)")
    t.add_argument("--init", help="start from a saved model")
    t.add_argument("--max-steps", type=int, dest="max_steps")
    t.add_argument("--lr", type=float)
    t.add_argument("--aggregation", choices=("self", "neighbor"))

    e = sub.add_parser("eval", parents=[common], help="evaluate policies on a dataset")
    e.add_argument("--data", help="test JSONL (default OUT/test.jsonl)")
    e.add_argument("--model", help="model file (default OUT/model.json if present)")
    e.add_argument("--policies", help=f"comma list from {','.join(POLICIES)}")

    r = sub.add_parser("report", parents=[common], help="aggregate results into summary CSVs")
    r.add_argument("--results", help="results CSV (default OUT/results.csv)")
    return p


CONFIG_FLAGS = ("seed", "out", "train", "test", "sizes", "draws", "max_steps", "lr", "aggregation")


def resolve_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {k: getattr(args, k) for k in CONFIG_FLAGS if getattr(args, k, None) is not None}
    if "sizes" in overrides:
        overrides["sizes"] = parse_sizes(overrides["sizes"])
    return cfg.updated(overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = resolve_config(args)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train":
            cmd_train(cfg, data=args.data, init=args.init)
        elif args.command == "eval":
            pols = [p.strip() for p in args.policies.split(",")] if args.policies else None
            cmd_eval(cfg, data=args.data, model_path=args.model, policies=pols)
        else:
            cmd_report(cfg, results=args.results)
    except HarnessError as exc:
        print(f"offloadnet: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"offloadnet: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
