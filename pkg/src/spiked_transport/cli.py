"""Command line entry point: ``spiked-transport <subcommand> ...``.

Exit codes: 0 on success, 2 on invalid configuration or arguments, 1 on a
run-time failure (solver certification, locked output directory).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import CertificationError, ConfigurationError, DimensionMismatchError, OutputLockedError
from .experiments import describe, read_measure, run
from .ot_solver import wasserstein_discrete
from .wpp import WppOptions, wpp_estimate

SUBCOMMAND_KINDS = {
    "solve": ("solve",),
    "wpp": ("rates_wpp",),
    "rates": ("rates_plugin", "rates_wpp"),
    "spike": ("spike_recovery",),
    "concentration": ("concentration",),
    "hardness": ("hardness_suite",),
}


def _u64(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spiked-transport", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", type=Path, required=config_required, help="YAML experiment config")
        p.add_argument("--seed", type=_u64, help="override the config seed")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--threads", type=_positive, default=1, help="worker processes for replicates")

    solve = sub.add_parser("solve", help="exact W_p between two measure files")
    solve.add_argument("mu", nargs="?", type=Path, help="CSV (w,x1,...,xd) or JSON measure")
    solve.add_argument("nu", nargs="?", type=Path)
    solve.add_argument("-p", type=float, default=1.0, help="transport order (default 1)")
    common(solve, config_required=False)

    wpp = sub.add_parser("wpp", help="WPP estimate between two measure files, or a rates_wpp config")
    wpp.add_argument("mu", nargs="?", type=Path)
    wpp.add_argument("nu", nargs="?", type=Path)
    wpp.add_argument("-p", type=float, default=2.0)
    wpp.add_argument("-k", type=_positive, default=1)
    wpp.add_argument("--restarts", type=_positive, default=16)
    common(wpp, config_required=False)

    for name, help_ in (
        ("rates", "rate experiment (rates_plugin or rates_wpp config)"),
        ("spike", "spike recovery experiment"),
        ("concentration", "subgaussian scaling experiment"),
    ):
        common(sub.add_parser(name, help=help_))
    common(sub.add_parser("hardness", help="moment-matching and prior constructions"), config_required=False)

    desc = sub.add_parser("describe", help="print the resolved plan without running")
    common(desc)
    return parser


def _load(args, command: str) -> ExperimentConfig:
    cfg = load_config(args.config)
    allowed = SUBCOMMAND_KINDS.get(command)
    if allowed is not None and cfg.kind not in allowed:
        raise ConfigurationError(f"{args.config}: subcommand {command!r} expects kind {' or '.join(allowed)}, got {cfg.kind!r}")
    return cfg.with_overrides(seed=args.seed, output=None if args.out is None else str(args.out))


def _report(report) -> None:
    summary = {k: v for k, v in report.summary.items() if k not in ("per_n", "laws", "priors")}
    print(f"wrote {report.out_dir}/rows.csv and summary.json")
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))


def _direct_solve(args) -> int:
    if args.mu is None or args.nu is None:
        raise ConfigurationError("solve needs two measure files or --config")
    result = wasserstein_discrete(read_measure(args.mu), read_measure(args.nu), args.p)
    print(repr(result.cost))
    return 0


def _direct_wpp(args) -> int:
    if args.mu is None or args.nu is None:
        raise ConfigurationError("wpp needs two measure files or --config")
    opts = WppOptions(restarts=args.restarts, seed=args.seed or 0)
    result = wpp_estimate(read_measure(args.mu), read_measure(args.nu), args.p, args.k, opts)
    print(json.dumps({"value": result.value, "frame": np.asarray(result.frame).tolist()}))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "describe":
            cfg = load_config(args.config).with_overrides(seed=args.seed, output=None if args.out is None else str(args.out))
            sys.stdout.write(describe(cfg))
            return 0
        if args.config is None:
            if args.command == "solve":
                return _direct_solve(args)
            if args.command == "wpp":
                return _direct_wpp(args)
            cfg = ExperimentConfig(kind="hardness_suite", seed=args.seed or 0)
        else:
            cfg = _load(args, args.command)
        _report(run(cfg, args.out, args.threads))
        return 0
    except (ConfigurationError, DimensionMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CertificationError, OutputLockedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
