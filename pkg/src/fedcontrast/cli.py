"""Command-line entry point.

Verbs:
    run     — execute one experiment into an output directory
    resume  — continue a run directory from its latest checkpoint
    sweep   — one sub-run per value of a single config axis
    plot    — accuracy curve(s) from a run or sweep directory

Exit codes: 0 success, 2 configuration error, 3 data error, 4 model or
training failure, 5 I/O error, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import parse_config
from .errors import ConfigError, DataError, ModelError, TrainingAbort
from .experiment import CONFIG_ECHO, run_experiment, run_sweep
from .plotting import emit_plots

log = logging.getLogger("fedcontrast")


def _add_config_args(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=Path, default=None, help="config file (key = value lines)")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key (repeatable)")
    parser.add_argument("--seed", type=int, default=None, help="shortcut for --set seed=N")


def _resolve_config(args):
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return parse_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedcontrast",
        description="Federated semi-supervised training with a contrastive "
                    "online/target network.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    _add_config_args(p_run)
    p_run.add_argument("--out", type=Path, required=True, help="run directory")

    p_resume = sub.add_parser("resume", help="continue a run from its checkpoint")
    p_resume.add_argument("--run-dir", type=Path, required=True)

    p_sweep = sub.add_parser("sweep", help="grid sweep over one config axis")
    _add_config_args(p_sweep)
    p_sweep.add_argument("--out", type=Path, required=True, help="sweep directory")
    p_sweep.add_argument("--axis", required=True, help="config key to vary")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values for the axis")

    p_plot = sub.add_parser("plot", help="emit accuracy figures")
    p_plot.add_argument("--metrics", type=Path, required=True,
                        help="metrics.csv, run directory, or sweep directory")
    p_plot.add_argument("--out", type=Path, required=True, help="figure file")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "run":
            cfg = _resolve_config(args)
            run_experiment(cfg, args.out)
        elif args.verb == "resume":
            echo = args.run_dir / CONFIG_ECHO
            if not echo.exists():
                raise ConfigError(f"{args.run_dir} is not a run directory ({echo} missing)")
            cfg = parse_config(echo)
            run_experiment(cfg, args.run_dir, resume=True)
        elif args.verb == "sweep":
            base = _resolve_config(args)
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            if not values:
                raise ConfigError("--values must list at least one value")
            run_sweep(base, args.axis, values, args.out)
        elif args.verb == "plot":
            emit_plots(args.metrics, args.out)
        return 0
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except DataError as exc:
        log.error("data error: %s", exc)
        return 3
    except (ModelError, TrainingAbort) as exc:
        log.error("training failure: %s", exc)
        return 4
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return 5


if __name__ == "__main__":
    sys.exit(main())
