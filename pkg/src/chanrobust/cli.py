"""Command-line entry point: ``chanrobust <subcommand> [flags]``.

Every subcommand runs the stages it depends on first; stages whose
inputs are unchanged since the last run are skipped.

Exit codes: 0 success, 2 validation error, 1 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ValidationError
from .pipeline import Lock, Pipeline, load_config

COMMANDS = {
    "gen-corpus": ("gen_corpus", "generate the synthetic corpus (no-op when corpus_dir is set)"),
    "simulate": ("simulate", "write the channel-shifted copies of every split"),
    "extract": ("extract", "compute and cache LFCC features"),
    "train": ("train", "train every strategy/seed pair"),
    "score": ("score", "score the eval trials on every channel"),
    "eval": ("evaluate", "EER tables, channel statistics, histograms and summaries"),
    "det": ("det", "DET curves and the seen-channel mean band"),
    "spectra": ("spectra", "average magnitude spectra per key and per channel"),
    "run": ("run", "the full pipeline"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [experiment], [synth], [train] sections")
    common.add_argument("--workdir", help="working directory (default: ./work or the config value)")
    common.add_argument("--seed", type=int, help="run only this seed")
    common.add_argument("--strategy", help="run only this strategy")
    common.add_argument("--channels", help="comma-separated seen channel ids")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="chanrobust", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    pipe = None
    try:
        overrides = {
            "workdir": args.workdir,
            "seeds": (args.seed,) if args.seed is not None else None,
            "strategies": (args.strategy,) if args.strategy else None,
            "seen_channels": tuple(c for c in args.channels.split(",") if c) if args.channels else None,
        }
        cfg = load_config(args.config, **overrides)
        pipe = Pipeline(cfg)
        with Lock(cfg.workdir):
            getattr(pipe, COMMANDS[args.command][0])()
    except ValidationError as e:
        print(f"chanrobust: {_where(pipe)}invalid input: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every other failure is a runtime error
        print(f"chanrobust: {_where(pipe)}{type(e).__name__}: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return 1
    print(f"ran: {', '.join(pipe.ran) or '-'}; up to date: {', '.join(pipe.skipped) or '-'}")
    if args.command in ("eval", "det", "spectra", "run"):
        print(f"report: {pipe.report_dir}")
    return 0


def _where(pipe) -> str:
    return f"stage {pipe.current_stage}: " if pipe is not None and pipe.current_stage else ""


if __name__ == "__main__":
    sys.exit(main())
