"""Run every preset, write one CSV per preset and print the trend checks.

    python3 scripts/run_all_presets.py [--out results/] [--seed 0]
"""
import argparse
import pathlib
import sys
import time

from simdfs.bench import CHECKS, PRESETS, rows_to_csv, run_preset


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=pathlib.Path, default=pathlib.Path("results"))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    failed = 0
    for name in PRESETS:
        t0 = time.perf_counter()
        rows = run_preset(name, seed=args.seed)
        (args.out / f"{name}.csv").write_text(rows_to_csv(rows))
        print(f"{name}: {len(rows)} rows in {time.perf_counter() - t0:.1f} s")
        for r in CHECKS[name](rows):
            failed += not r.passed
            print(f"  {'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
