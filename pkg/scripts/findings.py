#!/usr/bin/env python3
"""Residuals of the as-typeset displays and the extended-state seed study.

    python3 scripts/findings.py [--seeds 0,1,2,3] [--skip-extstate]
"""

import argparse

from renorm_lab import finitevol, opalgebra


def literal_table():
    print("display read as typeset           canonical    perturbed")
    for n in (6, 8):
        base = opalgebra.make_instance(n, 1, 1.0, 0.5, 0.3, 0)
        a = opalgebra.literal_variants(base)
        b = opalgebra.literal_variants(opalgebra.perturbed_instance(base))
        print(f"N = {n}")
        for key in a:
            print(f"  {key:32s} {a[key]:.3e}    {b[key]:.3e}")


def extstate_study(seeds):
    print("\nseed  ratios deviation/sqrt(kappa) at kappa = 0.01, 0.04, 0.16   spread")
    for seed in seeds:
        sw = finitevol.extstate_sweep(seed=seed)
        ratios = "  ".join(f"{r:.4f}" for r in sw.ratios)
        print(f"{seed:4d}  {ratios}   {sw.spread:.3f}")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", default="0,1,2,3")
    p.add_argument("--skip-extstate", action="store_true")
    args = p.parse_args()
    literal_table()
    if not args.skip_extstate:
        extstate_study([int(s) for s in args.seeds.split(",")])


if __name__ == "__main__":
    main()
