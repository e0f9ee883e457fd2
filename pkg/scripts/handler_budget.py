"""HPUs needed to keep up with line rate for a range of average handler durations."""
import argparse

from simdfs.pspin import handler_budget_ns, hpus_needed


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mtu", type=int, default=2048)
    ap.add_argument("--hpus", type=int, default=32)
    args = ap.parse_args()
    for rate in (200e9, 400e9):
        budget = handler_budget_ns(args.mtu, rate, args.hpus)
        print(f"{rate / 1e9:.0f} Gbit/s: {args.hpus} HPUs allow {budget:.2f} ns per handler")
        for avg in (40, 92, 193, 1_000, 2_106, 16_681, 23_018):
            print(f"  avg {avg:>6} ns -> {hpus_needed(avg, args.mtu, rate):>5} HPUs")


if __name__ == "__main__":
    main()
