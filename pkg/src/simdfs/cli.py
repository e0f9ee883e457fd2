"""``simdfs`` command line: preset figure runs and custom scenario files.

Exit codes: 0 success, 2 configuration error, 3 a ``--check`` threshold failed.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from . import bench

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CHECK = 3


def _emit(rows, fmt: str, output: str | None) -> None:
    text = bench.rows_to_csv(rows) if fmt == "csv" else bench.rows_to_jsonl(rows)
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="simdfs", description="NIC-offloaded DFS data-path simulator")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a preset scenario set")
    run.add_argument("--preset", required=True, choices=bench.PRESETS)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--output", help="write rows here instead of stdout")
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--check", action="store_true",
                     help="evaluate the preset's trend checks; exit 3 if any fails")

    custom = sub.add_parser("custom", help="run a scenario described by a key = value file")
    custom.add_argument("--config", required=True)
    custom.add_argument("--output")
    custom.add_argument("--format", choices=("csv", "json"), default="csv")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "run":
        rows = bench.run_preset(args.preset, seed=args.seed)
        _emit(rows, args.format, args.output)
        if args.check:
            results = bench.CHECKS[args.preset](rows)
            for r in results:
                print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}", file=sys.stderr)
            if not all(r.passed for r in results):
                return EXIT_CHECK
        return EXIT_OK

    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"simdfs: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = bench.parse_config(text)
        rows = bench.run_custom(cfg)
    except bench.ConfigError as exc:
        print(f"simdfs: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _emit(rows, args.format, args.output)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
