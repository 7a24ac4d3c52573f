"""Command line entry point: ``samlab {theory,train,attack,sweep,plot}``.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import config, harness


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; repeatable")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="samlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"theory": "robust feature weights over a (p, eta, n, eps) grid",
             "train": "train one model and evaluate the configured attack budgets",
             "attack": "evaluate a saved checkpoint under the configured budgets"}
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text))
    sub.choices["attack"].add_argument("--checkpoint", help="checkpoint to attack")
    sw = sub.add_parser("sweep", help="one independent run per point of a config grid")
    _common(sw)
    sw.add_argument("--parallel", type=int, default=1, help="number of worker processes")
    pl = sub.add_parser("plot", help="line/scatter figure from a results CSV")
    pl.add_argument("csv")
    pl.add_argument("--x", required=True)
    pl.add_argument("--y", required=True, action="append")
    pl.add_argument("--group", help="column whose values split the data into series")
    pl.add_argument("--kind", choices=("line", "scatter"), default="line")
    pl.add_argument("--out", required=True, help="image path")
    return parser


def _overrides(args) -> dict:
    out = {"task": args.command}
    for item in args.set:
        if "=" not in item:
            raise config.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = config.parse_value(v)
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out:
        out["out"] = args.out
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "plot":
        from .plot import plot_csv
        try:
            plot_csv(args.csv, args.x, args.y, args.out, group=args.group, kind=args.kind)
        except (OSError, KeyError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        return 0
    try:
        cfg = config.load(args.config, _overrides(args))
    except config.ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "theory":
            reports = harness.run_theory(cfg)
            print(f"{len(reports)} theory rows written to {cfg['out']}")
        elif args.command == "train":
            rec = harness.run_train(cfg)
            rec.pop("model")
            print(json.dumps({k: rec[k] for k in ("clean_accuracy", "robust", "wr_estimate")}))
        elif args.command == "attack":
            rec = harness.run_attack(cfg, checkpoint=args.checkpoint)
            print(json.dumps({k: rec[k] for k in ("clean_accuracy", "robust")}))
        else:
            rows = harness.run_sweep(cfg, parallel=args.parallel)
            failed = sum(1 for r in rows if r["status"] != "ok")
            print(f"{len(rows)} sweep rows ({failed} failed) written to {cfg['out']}")
    except config.ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 1
    except Exception as exc:
        logging.getLogger("samlab").error("%s: %s", type(exc).__name__, exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
