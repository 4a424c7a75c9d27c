#!/usr/bin/env python3
"""Run the acceptance battery and write a JSON summary.

    python3 scripts/run_acceptance.py [--quick] [--only 3,4] [--out acceptance.json]
"""

import argparse
import sys

from renorm_lab import acceptance
from renorm_lab.reports import RunConfig, write_report


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--quick", action="store_true")
    p.add_argument("--only", default="")
    p.add_argument("--out", default="acceptance.json")
    args = p.parse_args()
    only = {int(x) for x in args.only.split(",") if x} or None
    results = acceptance.run_all(args.quick, only, echo=print)
    summ = acceptance.summary(results)
    cfg = RunConfig("run_acceptance", {"quick": args.quick, "only": sorted(only or [])},
                    {"report": args.out})
    write_report(args.out, cfg, summ, summ["all_passed"])
    print(f"{summ['passed']}/{summ['total']} criteria passed; report in {args.out}")
    return 0 if summ["all_passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
