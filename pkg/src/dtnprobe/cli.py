"""``dtn-probe`` command line.

Exit codes: 0 all thresholds pass, 1 some threshold fails, 2 invalid configuration
or arguments, 3 solver failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .domain import ConfigurationError
from .elliptic import SolverError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
OUT_ENV = "DTN_PROBE_OUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser():
    from .experiments import EXPERIMENTS

    p = _Parser(prog="dtn-probe", description="Boundary probing experiments for semilinear elliptic DtN maps.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("--config", help="TOML configuration (defaults when omitted)")
    run.add_argument("--experiment", required=True, help=f"one of {', '.join(list(EXPERIMENTS) + ['all'])}")
    run.add_argument("--workers", type=int, default=1, help="worker threads for independent items")
    run.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
    run.add_argument("--no-plots", action="store_true")
    val = sub.add_parser("validate-config", help="check a configuration file")
    val.add_argument("path")
    rep = sub.add_parser("report", help="re-render plots from the CSVs of a run directory")
    rep.add_argument("directory")
    return p


def _run(args):
    from .experiments import EXPERIMENTS, run_experiments

    if args.experiment != "all" and args.experiment not in EXPERIMENTS:
        print(f"unknown experiment {args.experiment!r}; choose from {', '.join(list(EXPERIMENTS) + ['all'])}",
              file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print("--workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    out = args.out or os.environ.get(OUT_ENV) or cfg.output_dir
    names = list(EXPERIMENTS) if args.experiment == "all" else [args.experiment]
    report = run_experiments(cfg, names, out, workers=args.workers, plots=not args.no_plots)
    print(f"report: {Path(out) / 'report.json'}")
    return EXIT_OK if report["passed"] else EXIT_FAIL


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "validate-config":
            cfg = load_config(args.path)
            print(f"{args.path}: ok (N={cfg.geometry.N}, r0={cfg.geometry.r0}, r1={cfg.geometry.r1})")
            return EXIT_OK
        if args.command == "report":
            from .plots import render_all

            d = Path(args.directory)
            if not d.is_dir():
                print(f"no such run directory: {d}", file=sys.stderr)
                return EXIT_CONFIG
            for s in render_all(d):
                print(s)
            return EXIT_OK
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        if exc.history:
            print(f"residual history: {exc.history[-5:]}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
