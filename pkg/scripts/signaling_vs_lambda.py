"""Signaling metric S(A -> B) of every prescription as the coupling grows.

    python3 scripts/signaling_vs_lambda.py --lambdas 0 0.1 0.25 0.5 --out sig.csv
"""
import argparse
import csv
import sys

from nlqm import bundled
from nlqm.analysis import signaling_metric
from nlqm.prescriptions import PRESCRIPTIONS
from nlqm.scenario_io import load_scenario


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default=str(bundled("bell_fig1")))
    ap.add_argument("--lambdas", type=float, nargs="+", default=[0.0, 0.1, 0.25, 0.5])
    ap.add_argument("--dt", type=float, default=5e-3)
    ap.add_argument("--grid", type=int, default=8)
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args(argv)

    base = load_scenario(args.scenario).with_dt(args.dt)
    sender, receiver = base.labels[:2]
    rows = []
    for lam in args.lambdas:
        sc = base.with_lambda(lam)
        for name in PRESCRIPTIONS:
            s = signaling_metric(sc, name, sender, receiver, args.grid).metric
            rows.append({"lambda": lam, "prescription": name, "S": s})
            print(f"lambda={lam:<6g} {name:14s} S={s:.3e}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["lambda", "prescription", "S"])
            writer.writeheader()
            writer.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
