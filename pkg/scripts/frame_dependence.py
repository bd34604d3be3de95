"""Difference between lab-frame and boosted-frame distributions versus rapidity.

Only rapidities that reverse the time order of the first two measurements
are reported; below that threshold every prescription agrees trivially.
"""
import argparse
import sys

import numpy as np

from nlqm import bundled
from nlqm.analysis import frame_compare
from nlqm.scenario_io import load_scenario
from nlqm.spacetime import order_flips


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=str(bundled("bell_fig1")))
    ap.add_argument("--rapidities", type=float, nargs="+",
                    default=list(np.linspace(-1.5, 1.5, 13)))
    ap.add_argument("--dt", type=float, default=5e-3)
    ap.add_argument("--prescriptions", nargs="+", default=["sqm", "everett", "collapse"])
    args = ap.parse_args(argv)

    sc = load_scenario(args.scenario).with_dt(args.dt)
    a, b = sc.measurements[:2]
    for r in args.rapidities:
        if not order_flips(a.event, b.event, r):
            continue
        diffs = "  ".join(f"{name}={frame_compare(sc, name, r).difference:.3e}"
                          for name in args.prescriptions)
        print(f"r={r:+.3f}  {diffs}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
