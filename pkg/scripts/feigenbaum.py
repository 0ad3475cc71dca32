#!/usr/bin/env python
"""Renormalisation levels of x^2 + c at (or near) the period-doubling accumulation."""
from __future__ import annotations

import argparse

from walklab.renorm import accumulation_parameter, feigenbaum_induced


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--c", type=float, default=None, help="parameter; default is the accumulation point")
    p.add_argument("--levels", type=int, default=8)
    p.add_argument("--root-tol", type=float, default=1e-10)
    args = p.parse_args()

    if args.c is None:
        acc = accumulation_parameter()
        print(f"accumulation c = {acc.c:.15f} (+- {acc.error:.1e})")
        print("delta estimates:", " ".join(f"{d:.6f}" for d in acc.delta[-4:]))
    rep = feigenbaum_induced(args.c, args.levels, args.root_tol)
    print(f"{'k':>3} {'p_k':>22} {'ratio':>10} {'residual':>10} {'branches':>8}")
    for lv in rep.levels:
        ratio = "" if lv["ratio"] is None else f"{lv['ratio']:.6f}"
        print(f"{lv['k']:>3} {lv['p']:22.15f} {ratio:>10} {lv['residual']:10.1e} {len(lv['branches']):>8}")
    print("stop:", rep.stop_reason)
    if rep.ratio_rate is not None:
        print(f"ratio differences decay at rate {rep.ratio_rate:.3f} per level")
    if rep.rescaled_rate is not None:
        print(f"rescaled return maps converge at rate {rep.rescaled_rate:.3f} per level")


if __name__ == "__main__":
    main()
