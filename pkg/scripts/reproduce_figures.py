"""Run every figure preset and write CSV + SVG into one directory.

    python scripts/reproduce_figures.py --out figures --workers 1
"""
import argparse
import sys
import time

from sccsim import figures


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="figures")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", nargs="*", default=figures.FIGURES)
    args = ap.parse_args()
    bad = []
    for pid in args.only:
        t0 = time.perf_counter()
        res = figures.run_figure(pid, out=args.out, workers=args.workers)
        print(res.report())
        print(f"  ({time.perf_counter() - t0:.1f} s)")
        if not res.passed:
            bad.append(pid)
    if bad:
        print("headline mismatches:", ", ".join(bad))
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
