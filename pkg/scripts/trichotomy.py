#!/usr/bin/env python
"""Classify the three shipped walks with mean drift -0.5, 0 and +0.5."""
from __future__ import annotations

import argparse
import time

from walklab import library
from walklab.spectral import mean_drift, strong_transience_margin
from walklab.stability import classify


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--orbits", type=int, default=1000)
    p.add_argument("--horizon", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()

    print(f"{'walk':>10} {'M':>8} {'K':>8} {'verdict':>15}  fractions")
    for name in ("negative", "symmetric", "positive"):
        w = library.get_walk(name)
        t = time.perf_counter()
        res = classify(w, args.orbits, args.horizon, args.seed, threads=args.threads)
        K = strong_transience_margin(w).K
        fr = " ".join(f"{k}={v:.3f}" for k, v in res.fractions.items())
        print(f"{name:>10} {mean_drift(w).M:8.4f} {K:8.4f} {res.verdict:>15}  {fr}"
              f"  ({time.perf_counter() - t:.1f}s)")


if __name__ == "__main__":
    main()
