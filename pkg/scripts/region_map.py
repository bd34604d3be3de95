"""Print a lattice region map as text, one row per time bin (latest on top)."""
import argparse
import sys

from nlqm import bundled
from nlqm.lattice import region_map
from nlqm.scenario_io import load_lattice


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lattice", default=str(bundled("fig4_regions")))
    ap.add_argument("--theta0", type=int, choices=(0, 1), default=None)
    args = ap.parse_args(argv)

    spec = load_lattice(args.lattice, args.theta0)
    regions = region_map(spec.carriers, spec.events, spec.time_grid, spec.theta0)
    names = sorted(set(regions.values()))
    glyph = {name: "." if name == "none" else chr(ord("a") + i) for i, name in enumerate(names)}
    for j in reversed(range(len(spec.time_grid))):
        cells = "".join(glyph[regions[(k, j)]] for k in range(len(spec.site_positions)))
        print(f"{spec.time_grid[j]:6.2f} {cells}")
    for name in names:
        print(f"  {glyph[name]} = {name}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
