"""Command-line entry point: ``nlqm {run,check,regions,sweep,oracle} FILE``.

Exit codes: 0 ok, 1 usage or configuration error, 2 a check failed,
3 the integrator left its accuracy envelope.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

from . import analysis
from .dynamics import AccuracyError
from .lattice import region_map, write_region_csv
from .prescriptions import PRESCRIPTIONS, Scenario, distribution
from .scenario_io import ScenarioError, is_lattice_file, load_lattice, load_scenario
from .spacetime import CausalRelation, classify

log = logging.getLogger("nlqm")

EXIT_OK, EXIT_USAGE, EXIT_CHECK, EXIT_ACCURACY = 0, 1, 2, 3

# thresholds for the check verdicts; the violating prescriptions are
# reported, never failed
NO_SIGNAL_TOL = {"sqm": 1e-10, "everett": 1e-8, "preselection": 1e-8, "causal": 1e-8}
VIOLATION_TOL = {"collapse": 1e-3, "postselection": 1e-3}
FRAME_TOL = 1e-9


@dataclass
class RunConfig:
    scenario: Path
    prescriptions: tuple[str, ...] = PRESCRIPTIONS
    dt: float | None = None
    grid: int = analysis.DEFAULT_GRID
    lambdas: tuple[float, ...] = (0.5, 0.25, 0.125, 0.0625)
    out: Path = Path("nlqm_out")
    theta0: int | None = None
    rapidity: float | None = None
    oracle: bool = False

    def __post_init__(self):
        if not self.scenario.exists():
            raise ScenarioError(f"scenario file {self.scenario} does not exist")
        if self.dt is not None and not self.dt > 0:
            raise ScenarioError("--dt must be positive")
        if self.grid < 2:
            raise ScenarioError("--grid must be at least 2")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nlqm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb, text in [("run", "distributions, signaling and frame reports"),
                       ("check", "verdict table; exit 2 on failure"),
                       ("regions", "region map CSV of a lattice file"),
                       ("sweep", "lambda sweep toward the linear limit"),
                       ("oracle", "dt/10 Richardson reference and deviation")]:
        p = sub.add_parser(verb, help=text)
        p.add_argument("scenario", type=Path)
        p.add_argument("--out", type=Path, default=Path("nlqm_out"))
        p.add_argument("--lightcone-theta0", type=int, choices=(0, 1), default=None,
                       dest="theta0")
        if verb == "regions":
            continue
        p.add_argument("--prescription", default="all", choices=PRESCRIPTIONS + ("all",))
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--grid", type=int, default=analysis.DEFAULT_GRID)
        p.add_argument("--rapidity", type=float, default=None)
        p.add_argument("--lambdas", type=float, nargs="+", default=[0.5, 0.25, 0.125, 0.0625])
        p.add_argument("--oracle", action="store_true")
    return parser


def _config(args) -> RunConfig:
    pres = PRESCRIPTIONS if getattr(args, "prescription", "all") == "all" else (args.prescription,)
    return RunConfig(args.scenario, pres, getattr(args, "dt", None),
                     getattr(args, "grid", analysis.DEFAULT_GRID),
                     tuple(getattr(args, "lambdas", ())), args.out, args.theta0,
                     getattr(args, "rapidity", None), getattr(args, "oracle", False))


def _scenario(cfg: RunConfig) -> Scenario:
    sc = load_scenario(cfg.scenario, cfg.theta0)
    return sc.with_dt(cfg.dt) if cfg.dt is not None else sc


def spacelike_pairs(sc: Scenario) -> list[tuple[str, str]]:
    """(sender, receiver) for every ordered spacelike pair of measurements."""
    ms = sc.measurements
    return [(a.label, b.label) for a in ms for b in ms
            if a is not b and classify(a.event, b.event) is CausalRelation.SPACELIKE]


def default_rapidity(sc: Scenario) -> float | None:
    """A boost that flips the first spacelike pair: velocity halfway past the flip point."""
    for sender, receiver in spacelike_pairs(sc):
        a, b = sc.measurement(sender), sc.measurement(receiver)
        dt, dx = b.t - a.t, b.x - a.x
        if dt != 0:
            return math.atanh(math.copysign((1.0 + abs(dt / dx)) / 2.0, dt * dx))
    return None


def _write_oracle(cfg: RunConfig, sc: Scenario, name: str, out: Path) -> float:
    rep = analysis.oracle_distribution(sc, name)
    analysis.write_distribution_csv(out / f"oracle_{name}.csv", rep.fine)
    print(f"oracle {name:14s} dt={sc.dt:g}  max|p_dt - p_ref| = {rep.deviation:.3e}")
    return rep.deviation


def cmd_run(cfg: RunConfig) -> int:
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    if is_lattice_file(cfg.scenario):
        return cmd_regions(cfg)
    sc = _scenario(cfg)
    summary = []
    for name in cfg.prescriptions:
        try:
            dist = distribution(sc, name)
        except ValueError as exc:
            log.warning("%s skipped: %s", name, exc)
            summary.append({"kind": "distribution", "prescription": name, "metric": None,
                            "threshold": None, "verdict": f"skipped: {exc}"})
            continue
        analysis.write_distribution_csv(out / f"dist_{name}.csv", dist)
        if cfg.oracle:
            _write_oracle(cfg, sc, name, out)
    reports = []
    for sender, receiver in spacelike_pairs(sc):
        for name in cfg.prescriptions:
            try:
                rep = analysis.signaling_metric(sc, name, sender, receiver, cfg.grid,
                                                NO_SIGNAL_TOL.get(name, 1e-8))
            except ValueError as exc:
                log.warning("signaling %s skipped: %s", name, exc)
                continue
            reports.append(rep)
            summary.append(rep.summary())
    if reports:
        analysis.write_signaling_csv(out / "signaling.csv", reports)
    rapidity = cfg.rapidity if cfg.rapidity is not None else default_rapidity(sc)
    frames = []
    if rapidity is not None:
        for name in cfg.prescriptions:
            try:
                frames.append(analysis.frame_compare(sc, name, rapidity, FRAME_TOL))
            except ValueError as exc:
                log.warning("frame comparison %s skipped: %s", name, exc)
        for rep in frames:
            summary.append(rep.summary())
        if frames:
            analysis.write_frame_csv(out / "frame.csv", frames)
    analysis.write_summary_json(out / "summary.json", summary)
    for entry in summary:
        if entry.get("metric") is not None:
            print(f"{entry['kind']:10s} {entry['prescription']:14s} "
                  f"metric={entry['metric']:.3e} threshold={entry['threshold']:.0e} "
                  f"{entry['verdict']}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_check(cfg: RunConfig) -> int:
    sc = _scenario(cfg)
    failed = False
    rows = []
    pairs = spacelike_pairs(sc)
    rapidity = cfg.rapidity if cfg.rapidity is not None else default_rapidity(sc)
    for name in cfg.prescriptions:
        for sender, receiver in pairs:
            try:
                rep = analysis.signaling_metric(sc, name, sender, receiver, cfg.grid)
            except ValueError as exc:
                rows.append((name, f"signal {sender}->{receiver}", float("nan"), f"skipped ({exc})"))
                continue
            s = rep.metric
            if name in VIOLATION_TOL:
                status = ("expected violation" if s > VIOLATION_TOL[name]
                          else "expected violation (not observed)")
            else:
                ok = s < NO_SIGNAL_TOL[name]
                failed |= not ok
                status = "pass" if ok else "FAIL"
            rows.append((name, f"signal {sender}->{receiver}", s, status))
        if rapidity is not None and name in ("sqm", "everett", "preselection"):
            try:
                rep = analysis.frame_compare(sc, name, rapidity, FRAME_TOL)
            except ValueError as exc:
                rows.append((name, "frame", float("nan"), f"skipped ({exc})"))
                continue
            failed |= not rep.verdict
            rows.append((name, f"frame r={rapidity:.3f}", rep.difference,
                         "pass" if rep.verdict else "FAIL"))
    for name, what, metric, status in rows:
        print(f"{name:14s} {what:22s} {metric:10.3e}  {status}")
    return EXIT_CHECK if failed else EXIT_OK


def cmd_regions(cfg: RunConfig) -> int:
    spec = load_lattice(cfg.scenario, cfg.theta0)
    regions = region_map(spec.carriers, spec.events, spec.time_grid, spec.theta0)
    cfg.out.mkdir(parents=True, exist_ok=True)
    path = cfg.out / "regions.csv"
    write_region_csv(path, regions, spec.time_grid, spec.site_positions)
    names = sorted(set(regions.values()))
    print(f"{len(spec.site_positions)} sites x {len(spec.time_grid)} bins, "
          f"{len(names)} regions: {', '.join(names)}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    sc = _scenario(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    lams = sorted(set(cfg.lambdas) | {0.0}, reverse=True)
    for name in cfg.prescriptions:
        if name == "sqm":
            continue
        try:
            table = analysis.born_limit_study(sc, name, lams)
        except ValueError as exc:
            log.warning("sweep %s skipped: %s", name, exc)
            continue
        path = cfg.out / f"born_limit_{name}.csv"
        with open(path, "w") as fh:
            fh.write("lambda,tv_distance\n")
            for row in table.rows():
                fh.write(f"{row['lambda']!r},{row['tv_distance']!r}\n")
        print(f"{name:14s} slope={table.slope:.3f} monotone={table.monotone}")
    return EXIT_OK


def cmd_oracle(cfg: RunConfig) -> int:
    sc = _scenario(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    for name in cfg.prescriptions:
        try:
            _write_oracle(cfg, sc, name, cfg.out)
        except ValueError as exc:
            log.warning("oracle %s skipped: %s", name, exc)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "check": cmd_check, "regions": cmd_regions,
            "sweep": cmd_sweep, "oracle": cmd_oracle}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return COMMANDS[args.verb](cfg)
    except AccuracyError as exc:
        print(f"accuracy error: {exc}", file=sys.stderr)
        return EXIT_ACCURACY
    except (ScenarioError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
