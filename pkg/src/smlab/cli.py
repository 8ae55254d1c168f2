"""Command-line entry point: ``smlab run`` and ``smlab check``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import acceptance
from .experiments import EXPERIMENTS, ExperimentConfig, load_config, run_experiment, write_outputs


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smlab", description="Score matching versus maximum likelihood experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log fit failures and progress")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write CSV (and SVG where defined)")
    run.add_argument("experiment", choices=sorted(EXPERIMENTS))
    run.add_argument("--config", help="JSON config file; flags below override its params")
    run.add_argument("--out", help="output directory (default: config output_dir or ./results)")
    run.add_argument("--seeds", type=int, help="number of replicates")
    run.add_argument("--n", type=int, help="samples per replicate")
    run.add_argument("--master-seed", type=int, help="master seed (default 42)")
    run.add_argument("--print-config", action="store_true", help="echo the resolved config and exit")

    check = sub.add_parser("check", help="run the acceptance suite; nonzero exit on any failure")
    check.add_argument("--out", default="smlab_check", help="directory for the criterion CSVs")
    check.add_argument("--no-repeat", action="store_true", help="skip the second run used for the determinism criterion")
    return parser


def _resolve(args) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
        if cfg.experiment != args.experiment:
            raise ValueError(f"config is for {cfg.experiment!r}, not {args.experiment!r}")
        params, out = dict(cfg.params), cfg.output_dir
    else:
        params, out = {}, "results"
    for flag, key in ((args.seeds, "seeds"), (args.n, "n"), (args.master_seed, "master_seed")):
        if flag is not None:
            params[key] = flag
    return ExperimentConfig(args.experiment, params, args.out or out).resolved()


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        try:
            cfg = _resolve(args)
        except (ValueError, OSError, json.JSONDecodeError) as exc:
            print(f"smlab: {exc}", file=sys.stderr)
            return 2
        if args.print_config:
            print(cfg.to_json())
            return 0
        rows = run_experiment(cfg)
        for path in write_outputs(cfg.experiment, rows, cfg.output_dir):
            print(path)
        return 0
    results = acceptance.run_check(args.out, echo=print, repeat=not args.no_repeat)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed" + (f"; failed: {failed}" if failed else ""))
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
