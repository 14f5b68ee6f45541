"""Command-line interface.

Subcommands: meta-train, sweep-pilots, sweep-adapt, gradcheck, eval.
Exit codes: 0 success, 1 configuration error, 2 numerical failure,
3 verification-check failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import ConfigurationError, NumericalError
from .harness import (
    default_config,
    evaluate_params,
    load_config,
    load_params,
    run_adaptation_sweep,
    run_gradcheck,
    run_meta_train,
    run_pilot_sweep,
    save_params,
    write_curve,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_CHECK = 3


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of calling sys.exit(2)."""

    def error(self, message):
        raise ConfigurationError(message)


def _build_parser():
    parser = _Parser(prog="metalink", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, profile_default):
        p.add_argument("--config", help="path to a key = value config file")
        p.add_argument("--profile", default=profile_default, help="profile when no --config is given")
        p.add_argument("--seed", type=int, help="override the config's seed / seed list")
        p.add_argument("--out", help="output path (overrides config.output_path)")
        p.add_argument("--first-order", action="store_true", help="use the first-order meta-gradient")
        p.add_argument("--workers", type=int, default=1, help="parallel workers over seeds")

    common(sub.add_parser("meta-train", help="learn an initialization"), "demod")
    common(sub.add_parser("sweep-pilots", help="SER vs pilot count"), "demod")
    common(sub.add_parser("sweep-adapt", help="BLER vs adaptation iteration"), "autoencoder")

    check = sub.add_parser("gradcheck", help="run the derivative verification suites")
    check.add_argument("--scale", choices=("small", "full"), default="small")

    ev = sub.add_parser("eval", help="evaluate saved parameters on fresh tasks")
    common(ev, "demod")
    ev.add_argument("--params", required=True, help="path to a .npz saved by meta-train")

    return parser


def _config_from_args(args):
    config = load_config(args.config) if args.config else default_config(args.profile)
    from dataclasses import replace

    if args.seed is not None:
        config = replace(config, seed=args.seed, seeds=(args.seed,))
    if args.first_order:
        config = replace(config, first_order=True)
    if args.out:
        config = replace(config, output_path=args.out)
    return config


def _cmd_meta_train(args):
    config = _config_from_args(args)
    result = run_meta_train(config)
    out = args.out or f"meta_params_{config.profile}.npz"
    save_params(out, result.params)
    first = result.history[0][1] if result.history else float("nan")
    last = result.history[-1][1] if result.history else float("nan")
    print(f"meta-trained {config.profile}: {len(result.history)} iterations, "
          f"meta-loss {first:.4f} -> {last:.4f}, saved {out}")
    return EXIT_OK


def _cmd_sweep(args, runner):
    config = _config_from_args(args)
    result = runner(config, workers=args.workers)
    write_curve(result.table, config.output_path)
    print(f"wrote {len(result.table)} rows to {config.output_path}")
    return EXIT_OK


def _cmd_gradcheck(args):
    report = run_gradcheck(args.scale)
    print(report.format())
    return EXIT_OK if report.passed else EXIT_CHECK


def _cmd_eval(args):
    config = _config_from_args(args)
    params = load_params(args.params)
    metric, values = evaluate_params(config, params)
    mean = sum(values) / len(values)
    print(f"{metric} over {len(values)} meta-test tasks: mean {mean:.5f}, "
          f"min {min(values):.5f}, max {max(values):.5f}")
    return EXIT_OK


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "meta-train":
            return _cmd_meta_train(args)
        if args.command == "sweep-pilots":
            return _cmd_sweep(args, run_pilot_sweep)
        if args.command == "sweep-adapt":
            return _cmd_sweep(args, run_adaptation_sweep)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "eval":
            return _cmd_eval(args)
        raise ConfigurationError(f"unknown command {args.command!r}")
    except ConfigurationError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
