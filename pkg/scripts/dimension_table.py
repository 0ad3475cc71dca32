#!/usr/bin/env python
"""Virtual dimension of survivor families against depth, for a walk and a perturbed copy."""
from __future__ import annotations

import argparse
import csv
import sys

from walklab import library
from walklab.dimension import beta_survivor_family, dimension_estimate, vhd
from walklab.stability import PerturbationSchedule, perturb


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--walk", default="negative", choices=library.available())
    p.add_argument("--depths", type=int, nargs="+", default=[2, 4, 6, 8, 10, 12, 14])
    p.add_argument("--C", type=float, default=0.1)
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--beta-slope", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv", default=None, help="write the table here instead of stdout")
    args = p.parse_args()

    F = library.get_walk(args.walk)
    G = perturb(F, PerturbationSchedule(args.C, args.lam), args.seed)
    eF = dimension_estimate(F, 0, 0, args.depths)
    eG = dimension_estimate(G, 0, 0, args.depths)

    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    w = csv.writer(out)
    w.writerow(["depth", "size", "beta_F", "beta_G", "hd_lower_F", "hd_upper_F", "slice_F", "slice_G"])
    for d, a, b in zip(args.depths, eF, eG):
        sl = []
        for walk in (F, G):
            fam = beta_survivor_family(walk, 0, d, args.beta_slope).family
            sl.append(vhd(fam) if len(fam) else 0.0)
        w.writerow([d, a.family_size, f"{a.beta:.6f}", f"{b.beta:.6f}",
                    f"{a.hd_lower:.6f}", f"{a.hd_upper:.6f}", f"{sl[0]:.6f}", f"{sl[1]:.6f}"])
    if args.csv:
        out.close()


if __name__ == "__main__":
    main()
