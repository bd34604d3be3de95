"""Distance to the Born rule as the coupling is halved, per prescription.

A slope near 1 on the log-log table means the deviation is first order in
the coupling.
"""
import argparse
import sys

from nlqm import bundled
from nlqm.analysis import born_limit_study
from nlqm.scenario_io import load_scenario


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=str(bundled("gpe_dimer")))
    ap.add_argument("--lambdas", type=float, nargs="+",
                    default=[0.5, 0.25, 0.125, 0.0625, 0.0])
    ap.add_argument("--prescriptions", nargs="+",
                    default=["everett", "collapse", "causal"])
    args = ap.parse_args(argv)

    sc = load_scenario(args.scenario)
    for name in args.prescriptions:
        table = born_limit_study(sc, name, args.lambdas)
        print(f"{name}: slope {table.slope:.3f}, monotone {table.monotone}")
        for row in table.rows():
            print(f"  lambda={row['lambda']:<8g} tv={row['tv_distance']:.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
