"""No-signaling metrics, Born-limit convergence and frame comparisons."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hilbert import Basis, bloch_basis
from .prescriptions import (
    Evaluator,
    OutcomeDistribution,
    Scenario,
    canonical_name,
    distribution,
    make_builder,
    sqm_distribution,
)
from .spacetime import CausalRelation, boosted_time, classify, in_future_cone, order_flips

DEFAULT_GRID = 8
# Richardson weight for a fourth-order method refined by a factor of 10
RICHARDSON_FACTOR = 10 ** 4 - 1


def basis_grid(subsystem: int, n: int = DEFAULT_GRID, phi: float = 0.0) -> list[Basis]:
    """Qubit bases rotated in one plane of the Bloch sphere, theta_k = k pi / n.

    ``phi = 0`` is the x-z plane; k pi / n for k < n covers every axis of that
    plane once (a basis and its flip are the same measurement).
    """
    if n < 2:
        raise ValueError("basis grid needs at least 2 points")
    return [bloch_basis(subsystem, k * math.pi / n, phi) for k in range(n)]


@dataclass(frozen=True, eq=False)
class SignalingReport:
    prescription: str
    sender: str
    receiver: str
    grid: str
    marginals: np.ndarray  # (grid point, receiver outcome)
    threshold: float = 1e-8

    @property
    def metric(self) -> float:
        m = self.marginals
        return float(np.max(m.max(axis=0) - m.min(axis=0)))

    @property
    def verdict(self) -> bool:
        return self.metric < self.threshold

    def summary(self) -> dict:
        return {"kind": "signaling", "prescription": self.prescription, "sender": self.sender,
                "receiver": self.receiver, "grid": self.grid, "metric": self.metric,
                "threshold": self.threshold, "verdict": "pass" if self.verdict else "fail"}


def signaling_metric(scenario: Scenario, prescription: str, sender: str, receiver: str,
                     grid: Sequence[Basis] | int = DEFAULT_GRID, threshold: float = 1e-8,
                     **kwargs) -> SignalingReport:
    """Largest change of the receiver's marginal as the sender's basis sweeps ``grid``."""
    s_ev, r_ev = scenario.measurement(sender), scenario.measurement(receiver)
    if classify(s_ev.event, r_ev.event) is not CausalRelation.SPACELIKE:
        raise ValueError(f"sender {sender!r} and receiver {receiver!r} are not spacelike separated")
    if isinstance(grid, int):
        desc = f"x-z plane, {grid} angles"
        grid = basis_grid(s_ev.subsystem, grid)
    else:
        desc = f"{len(grid)} custom bases"
    builder = make_builder(scenario)
    margs = []
    for basis in grid:
        sc = scenario.with_basis(sender, basis)
        dist = Evaluator(sc, prescription, builder=builder, **kwargs).distribution()
        margs.append(dist.marginal(receiver))
    return SignalingReport(canonical_name(prescription), sender, receiver, desc,
                           np.array(margs), threshold)


def deletion_deviations(scenario: Scenario, prescription: str, receiver: str) -> dict[str, float]:
    """Receiver-marginal change when each event outside its past cone is removed."""
    r = scenario.measurement(receiver)
    base = distribution(scenario, prescription).marginal(receiver)
    out = {}
    for m in scenario.measurements:
        if m.label == receiver or in_future_cone(m.event, r.event, scenario.theta0):
            continue
        marg = distribution(scenario.without(m.label), prescription).marginal(receiver)
        out[m.label] = float(np.max(np.abs(marg - base)))
    return out


@dataclass(frozen=True, eq=False)
class BornLimitTable:
    prescription: str
    lambdas: np.ndarray
    distances: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        num, den = self.distances[1:], self.distances[:-1]
        return np.divide(num, den, out=np.full_like(num, np.nan), where=den > 0)

    @property
    def slope(self) -> float:
        """Fitted exponent of distance ~ lam^slope over the positive entries."""
        mask = (self.lambdas > 0) & (self.distances > 0)
        if mask.sum() < 2:
            return float("nan")
        return float(np.polyfit(np.log(self.lambdas[mask]), np.log(self.distances[mask]), 1)[0])

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.distances) <= 1e-15))

    def rows(self):
        for lam, d in zip(self.lambdas, self.distances):
            yield {"lambda": float(lam), "tv_distance": float(d)}


def born_limit_study(scenario: Scenario, prescription: str, lambdas: Sequence[float],
                     **kwargs) -> BornLimitTable:
    lams = np.asarray(lambdas, dtype=float)
    if lams.ndim != 1 or len(lams) < 2 or np.any(np.diff(lams) >= 0) or lams[-1] < 0:
        raise ValueError("lambdas must be a strictly decreasing sequence of non-negative values")
    ref = sqm_distribution(scenario)
    dists = [distribution(scenario.with_lambda(lam), prescription, **kwargs).total_variation(ref)
             for lam in lams]
    return BornLimitTable(canonical_name(prescription), lams, np.array(dists))


@dataclass(frozen=True, eq=False)
class FrameReport:
    prescription: str
    rapidity: float
    lab: OutcomeDistribution
    boosted: OutcomeDistribution
    lab_order: tuple[str, ...]
    boosted_order: tuple[str, ...]
    threshold: float = 1e-9

    @property
    def difference(self) -> float:
        return self.lab.max_abs_diff(self.boosted)

    @property
    def verdict(self) -> bool:
        return self.difference < self.threshold

    def summary(self) -> dict:
        return {"kind": "frame", "prescription": self.prescription, "rapidity": self.rapidity,
                "lab_order": list(self.lab_order), "boosted_order": list(self.boosted_order),
                "metric": self.difference, "threshold": self.threshold,
                "verdict": "pass" if self.verdict else "fail"}


def frame_compare(scenario: Scenario, prescription: str, rapidity: float,
                  threshold: float = 1e-9) -> FrameReport:
    """Distribution in the lab frame versus the frame of the given rapidity.

    Collapse updates its boundary on the boosted frame's equal-time surfaces.
    The other prescriptions have frame-independent boundaries; their boosted
    evaluation applies Heisenberg-picture projectors in the boosted order.
    """
    ms = scenario.measurements
    if not any(order_flips(a.event, b.event, rapidity)
               for i, a in enumerate(ms) for b in ms[i + 1:]):
        raise ValueError(f"no pair of measurements changes order at rapidity {rapidity}")
    name = canonical_name(prescription)
    lab_order = tuple(scenario.labels)
    keyed = sorted(ms, key=lambda m: boosted_time(m.t, m.x, rapidity))
    boosted_order = tuple(m.label for m in keyed)
    lab = distribution(scenario, name)
    if name == "collapse":
        boosted = Evaluator(scenario, name, rapidity=rapidity).distribution()
    else:
        ev = Evaluator(scenario, name)
        full_order = ([scenario.prep_label] if scenario.source is not None else []) + list(boosted_order)
        boosted = ev.heisenberg_distribution(full_order)
    return FrameReport(name, float(rapidity), lab, boosted, lab_order, boosted_order, threshold)


@dataclass(frozen=True, eq=False)
class OracleReport:
    prescription: str
    dt: float
    coarse: OutcomeDistribution
    fine: OutcomeDistribution
    extrapolated: np.ndarray

    @property
    def deviation(self) -> float:
        """max |p_dt - p_extrapolated|."""
        return float(np.max(np.abs(self.coarse.probs - self.extrapolated)))

    @property
    def refinement_gap(self) -> float:
        return self.coarse.max_abs_diff(self.fine)


def oracle_distribution(scenario: Scenario, prescription: str, dt: float | None = None,
                        **kwargs) -> OracleReport:
    """Reference distribution from a dt/10 run plus a Richardson correction."""
    dt = scenario.dt if dt is None else dt
    coarse = distribution(scenario.with_dt(dt), prescription, **kwargs)
    fine = distribution(scenario.with_dt(dt / 10), prescription, **kwargs)
    extrap = fine.probs + (fine.probs - coarse.probs) / RICHARDSON_FACTOR
    return OracleReport(canonical_name(prescription), dt, coarse, fine, extrap)


def write_distribution_csv(path, dist: OutcomeDistribution) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(dist.labels) + ["probability"])
        for idx, p in dist.items():
            w.writerow(list(idx) + [repr(p)])


def write_signaling_csv(path, reports: Sequence[SignalingReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prescription", "sender", "receiver", "grid_index", "outcome", "marginal"])
        for rep in reports:
            for g, row in enumerate(rep.marginals):
                for o, p in enumerate(row):
                    w.writerow([rep.prescription, rep.sender, rep.receiver, g, o, repr(float(p))])


def write_frame_csv(path, reports: Sequence[FrameReport]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        labels = reports[0].lab.labels if reports else ()
        w.writerow(["prescription", "rapidity"] + list(labels) + ["p_lab", "p_boosted"])
        for rep in reports:
            for idx, p in rep.lab.items():
                w.writerow([rep.prescription, repr(rep.rapidity)] + list(idx)
                           + [repr(p), repr(rep.boosted.p(idx))])


def write_summary_json(path, entries: Sequence[dict]) -> None:
    with open(path, "w") as fh:
        json.dump(list(entries), fh, indent=2, sort_keys=True)
        fh.write("\n")
