"""T2 versus pulse number for a Lorentzian bath, with the local scaling exponent.

In the slow-bath limit (correlation time much longer than T2) the exponent
approaches 2/3; a fast bath gives exponent near 0 at small N and rises once the
pulse spacing drops below the correlation time.

    python scripts/lorentzian_scaling.py --amplitude 2.2e8 --tau-c 10 --max-n 16384
"""
import argparse

import numpy as np

from sccsim import coherence as coh


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--amplitude", type=float, default=2.2e8)
    ap.add_argument("--tau-c", type=float, default=10.0)
    ap.add_argument("--max-n", type=int, default=4096)
    ap.add_argument("--csv", help="also write N,T2 to this file")
    args = ap.parse_args()
    spec = coh.NoiseSpectrum.lorentzian(args.amplitude, args.tau_c)
    ns = 2 ** np.arange(int(np.log2(args.max_n)) + 1)
    t2 = []
    guess = 1e-2
    for n in ns:
        guess = coh.t2_from_spectrum(spec, int(n), guess)
        t2.append(guess)
    local = np.gradient(np.log(t2), np.log(ns))
    print(f"{'N':>6} {'T2 (s)':>12} {'local psi':>10}")
    for n, t, p in zip(ns, t2, local):
        print(f"{n:6d} {t:12.5g} {p:10.4f}")
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(coh.write_scaling_csv(ns, t2))


if __name__ == "__main__":
    main()
