"""Command-line entry point: ``wpcn {train,eval,baseline,oracle,aggregate,selftest}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import runner, selftest
from .config import ExperimentConfig, load_config
from .errors import WpcnError

log = logging.getLogger("wpcn")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value file")
    p.add_argument("--n-cells", type=int)
    p.add_argument("--eh-model", choices=("linear", "nonlinear"))
    p.add_argument("--seed", type=int, action="append",
                   help="run seed (repeatable); default: the config's seeds")
    p.add_argument("--train-slots", type=int)
    p.add_argument("--test-slots", type=int)
    p.add_argument("--out-dir", type=Path, default=Path("runs"))
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wpcn", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="distributed training, one run per seed")
    _common(p)
    p.add_argument("--policy", choices=("madrl",), default=None)

    p = sub.add_parser("eval", help="evaluate trained checkpoints with frozen actors")
    _common(p)
    p.add_argument("--checkpoints", type=Path, required=True,
                   help="output directory of a previous train run")
    p.add_argument("--greedy-eval", action="store_true", help="argmax instead of sampling")

    p = sub.add_parser("baseline", help="centralized per-slot baseline")
    _common(p)
    p.add_argument("--policy", choices=("naive", "pgd", "oracle"), default="naive")

    p = sub.add_parser("oracle", help="brute-force grid oracle (small N only)")
    _common(p)
    p.add_argument("--K", type=int, help="grid size per action dimension")

    p = sub.add_parser("aggregate", help="per-slot mean and sd across metrics files")
    p.add_argument("files", nargs="+", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("selftest", help="quick built-in invariant checks")
    p.add_argument("--seed", type=int, default=0)
    return ap


def make_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    pairs = {}
    for item in args.overrides:
        if "=" not in item:
            raise WpcnError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    direct = {"n_cells": args.n_cells, "eh_model": args.eh_model,
              "train_slots": args.train_slots, "test_slots": args.test_slots,
              "policy": getattr(args, "policy", None)}
    pairs.update({k: v for k, v in direct.items() if v is not None})
    if args.seed:
        pairs["seeds"] = tuple(args.seed)
    if getattr(args, "greedy_eval", False):
        pairs["greedy_eval"] = True
    if getattr(args, "K", None):
        pairs["oracle_K"] = args.K
    return cfg.with_overrides(pairs)


def _summary(results) -> dict:
    return {f"seed_{r.seed}": {"mean_sum_rate": r.mean_sum_rate, "skipped": r.skipped,
                               "updates": r.updates, "failed": r.failed}
            for r in results}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selftest":
            return 0 if selftest.run(args.seed) else 1
        if args.command == "aggregate":
            res = runner.aggregate(args.files, args.out)
            print(f"aggregated {res['n_files']} files over {len(res['slot'])} slots -> {args.out}")
            return 0
        cfg = make_config(args)
        out = args.out_dir
        if args.command == "train":
            results = runner.train(cfg, out)
            print(json.dumps(_summary(results), indent=2))
            return 1 if any(r.failed for r in results) else 0
        if args.command == "eval":
            summary = runner.evaluate(cfg, args.checkpoints, out)
            summary["per_seed"] = {str(k): v for k, v in summary["per_seed"].items()}
            print(json.dumps(summary, indent=2))
            return 0
        policy = "oracle" if args.command == "oracle" else cfg.policy
        if policy == "madrl":
            policy = "naive"
        results = [runner.run_baseline(cfg, policy, s, out_dir=out) for s in cfg.seeds]
        print(json.dumps(_summary(results), indent=2))
        return 0
    except WpcnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
