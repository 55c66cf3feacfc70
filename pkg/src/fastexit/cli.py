"""Command-line entry point.

Subcommands: check, simulate, average, action, quasipotential, exit,
emit-plots.  Thread count falls back to the FASTEXIT_THREADS environment
variable.  Exit status: 0 success, 1 configuration or file error,
2 required hypothesis failed, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import load_config, resolve_config
from .errors import ConfigError, DivergenceError
from .runs import (
    EXIT_DIVERGED,
    emit_plot_data,
    run_action,
    run_average,
    run_check,
    run_exit,
    run_quasipotential,
    run_simulate,
)

RUN_KINDS = ("check", "simulate", "average", "action", "quasipotential", "exit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # keep status 2 reserved for hypothesis failures
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="fastexit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in RUN_KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--threads", type=int, default=None, help="worker threads")
        p.add_argument("--paths", type=int, default=None, help="override path count")
    p = sub.add_parser("emit-plots", help="reshape run outputs into plot-ready CSVs")
    p.add_argument("--out", required=True, help="results directory to read and write")
    return parser


def _threads(args, resolved) -> int:
    """Precedence: --threads flag, FASTEXIT_THREADS, config, single-threaded."""
    if args.threads is not None:
        return args.threads
    env = os.environ.get("FASTEXIT_THREADS")
    if env:
        return int(env)
    return resolved.get("threads", 1)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "emit-plots":
            written = emit_plot_data(Path(args.out))
            for p in written:
                print(p)
            return 0
        raw = load_config(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.paths is not None:
            raw["n_paths"] = args.paths
        if args.out is not None:
            raw["output_dir"] = args.out
        raw.setdefault("experiment", {}).setdefault("kind", args.command)
        if args.command != "check" and raw["experiment"]["kind"] != args.command:
            raw["experiment"]["kind"] = args.command
        resolved = resolve_config(raw)
        out_dir = Path(resolved["output_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        threads = _threads(args, resolved)
        if args.command == "check":
            status = run_check(resolved, out_dir)
        elif args.command == "simulate":
            status = run_simulate(resolved, out_dir)
        elif args.command == "average":
            status = run_average(resolved, out_dir, threads=threads)
        elif args.command == "action":
            status = run_action(resolved, out_dir)
        elif args.command == "quasipotential":
            status = run_quasipotential(resolved, out_dir)
        else:
            status = run_exit(resolved, out_dir, threads=threads)
        if status != 0:
            print(f"fastexit {args.command}: finished with status {status}", file=sys.stderr)
        return status
    except ConfigError as exc:
        print(f"fastexit: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"fastexit: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"fastexit: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
