"""Per-packet streaming EC versus per-chunk accelerator EC across block sizes.

Prints latency for both and splits the streaming side into its largest
payload-handler duration, which dominates at small blocks.

    python3 scripts/ec_inec_comparison.py [--rate 100e9]
"""
import argparse

from simdfs.bench import Scenario, run_scenario

KiB = 1024


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rate", type=float, default=100e9, help="line rate in bit/s")
    args = ap.parse_args()
    print(f"{'RS':>6} {'block':>8} {'spin_ns':>10} {'inec_ns':>10} {'ratio':>6} {'spin_ph_max':>11}")
    for k, m in ((3, 2), (6, 3)):
        for block in (1 * KiB, 4 * KiB, 16 * KiB, 64 * KiB, 256 * KiB, 512 * KiB):
            common = dict(write_size_bytes=block, k=k, m=m, line_rate_bps=args.rate)
            spin = run_scenario(Scenario(strategy="spin_triec", **common))
            inec = run_scenario(Scenario(strategy="inec_triec", **common))
            ratio = spin["latency_ns"] / inec["latency_ns"]
            print(f"({k},{m}) {block // KiB:>6}K {spin['latency_ns']:>10.0f} {inec['latency_ns']:>10.0f} "
                  f"{ratio:>6.2f} {spin['ph_max_ns']:>11.0f}")


if __name__ == "__main__":
    main()
