"""Per-carrier boundary bookkeeping for outcome broadcasts.

A *carrier* is a degree of freedom with a worldline: a lattice site (fixed
position) or a particle moving between measurement events.  The ledger
records, for every carrier and every time on a grid, which measurement
outcomes have reached it.  A label set ``L`` induces a boundary

    B(())      = (start_state, start_time)
    B(L + [m]) = (normalize(P_m psi_{B(L)}(t_m)), t_m)

where ``psi_{B}`` is the non-linear solution through boundary ``B`` and the
members of ``L`` are taken in the rule's order (lab time by default).  The
non-linear potential of each carrier is driven by the solution through the
boundary its current label set induces.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .dynamics import (
    DEFAULT_DT,
    NonlinearModel,
    SystemModel,
    TrajectoryCache,
    local_propagator,
    mixed_propagator,
)
from .hilbert import LinearOperator, apply_local
from .spacetime import Event, Worldline, in_future_cone, boosted_time

MAX_LATTICE_DIM = 2 ** 12
ZERO_NORM = 1e-14
GRID_ATOL = 1e-12

Reach = Callable[[Event, Event], bool]


@dataclass(frozen=True, eq=False)
class LatticeField:
    """Sites on a line with on-site models and nearest-neighbour couplings.

    ``couplings`` holds ``(i, i + 1, matrix)`` entries, the matrix acting on
    the two-site space ``site_dim**2``.
    """

    site_positions: tuple[float, ...]
    site_dim: int = 2
    couplings: tuple = ()
    onsite: tuple[NonlinearModel, ...] | None = None

    def __post_init__(self):
        pos = tuple(float(x) for x in self.site_positions)
        if not pos:
            raise ValueError("lattice needs at least one site")
        object.__setattr__(self, "site_positions", pos)
        if self.site_dim < 2:
            raise ValueError("site_dim must be >= 2")
        if self.site_dim ** len(pos) > MAX_LATTICE_DIM:
            raise ValueError(f"total dimension {self.site_dim}^{len(pos)} exceeds {MAX_LATTICE_DIM}")
        cpl = []
        for i, j, mat in self.couplings:
            i, j = int(i), int(j)
            if j != i + 1 or not 0 <= i < len(pos) - 1:
                raise ValueError(f"coupling ({i}, {j}) is not a nearest-neighbour pair")
            mat = np.array(mat, dtype=complex)
            if mat.shape != (self.site_dim ** 2,) * 2:
                raise ValueError(f"coupling matrix shape {mat.shape} does not fit two sites")
            if np.max(np.abs(mat - mat.conj().T)) >= 1e-12:
                raise ValueError(f"coupling ({i}, {j}) is not Hermitian")
            cpl.append((i, j, mat))
        object.__setattr__(self, "couplings", tuple(cpl))
        if self.onsite is not None:
            onsite = tuple(self.onsite)
            if len(onsite) != len(pos) or any(m.dims != (self.site_dim,) for m in onsite):
                raise ValueError("need one single-site model per site")
            object.__setattr__(self, "onsite", onsite)

    @property
    def n_sites(self) -> int:
        return len(self.site_positions)

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.site_dim,) * self.n_sites

    @property
    def worldlines(self) -> tuple[Worldline, ...]:
        return tuple(Worldline.static(x) for x in self.site_positions)

    @property
    def model(self) -> SystemModel:
        d = self.site_dim
        onsite = self.onsite
        if onsite is None:
            onsite = tuple(NonlinearModel(LinearOperator((d,), np.zeros((d, d))))
                           for _ in range(self.n_sites))
        interaction = None
        if self.couplings:
            total = np.zeros((d ** self.n_sites,) * 2, dtype=complex)
            for i, _, mat in self.couplings:
                left, right = d ** i, d ** (self.n_sites - i - 2)
                total += np.kron(np.kron(np.eye(left), mat), np.eye(right))
            interaction = LinearOperator(self.dims, total)
        return SystemModel(onsite, interaction)


def _worldlines(carriers) -> tuple[Worldline, ...]:
    if isinstance(carriers, LatticeField):
        return carriers.worldlines
    return tuple(carriers)


def light_cone_reach(theta0: int | None = None) -> Reach:
    return lambda source, probe: in_future_cone(source, probe, theta0)


def simultaneity_reach(rapidity: float = 0.0) -> Reach:
    """Outcome known everywhere on or after the event's equal-time surface of a frame."""
    def reach(source: Event, probe: Event) -> bool:
        return (boosted_time(probe.t, probe.x, rapidity)
                >= boosted_time(source.t, source.x, rapidity) - GRID_ATOL)
    return reach


@dataclass(frozen=True, eq=False)
class BoundaryLedger:
    """Label sets per (carrier, grid time).

    Between grid points the labels of the latest grid time at or before ``t``
    apply: an outcome reaches a carrier at the first grid time at or after its
    arrival, never earlier.
    """

    time_grid: np.ndarray
    labels: tuple[tuple[frozenset, ...], ...]
    events: tuple[Event, ...]

    @property
    def n_carriers(self) -> int:
        return len(self.labels)

    def bin_of(self, t: float) -> int:
        i = int(np.searchsorted(self.time_grid, t + GRID_ATOL, side="right")) - 1
        if i < 0:
            raise ValueError(f"time {t} precedes the ledger grid")
        return i

    def labels_at(self, carrier: int, t: float) -> frozenset:
        return self.labels[carrier][self.bin_of(t)]

    def change_times(self, carrier: int, t_from: float, t_to: float) -> list[float]:
        """Grid times strictly inside (t_from, t_to) where the carrier's labels change."""
        row = self.labels[carrier]
        out = []
        for j in range(1, len(row)):
            t = float(self.time_grid[j])
            if t_from + GRID_ATOL < t < t_to - GRID_ATOL and row[j] != row[j - 1]:
                out.append(t)
        return out

    def is_monotone(self) -> bool:
        return all(a <= b for row in self.labels for a, b in zip(row, row[1:]))


def build_ledger(carriers, measurements: Sequence[Event], time_grid: Sequence[float],
                 theta0: int | None = None, reach: Reach | None = None) -> BoundaryLedger:
    """Label every (carrier, grid time) with the outcomes that have reached it."""
    grid = np.asarray(time_grid, dtype=float)
    if grid.ndim != 1 or len(grid) == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("time grid must be a strictly increasing 1-D sequence")
    events = tuple(measurements)
    if any(b.t < a.t for a, b in zip(events, events[1:])):
        raise ValueError("measurements must be ordered by lab time")
    for ev in events:
        if np.min(np.abs(grid - ev.t)) > GRID_ATOL * max(1.0, abs(ev.t)):
            raise ValueError(f"grid does not contain measurement time {ev.t} ({ev.label!r})")
    if len({ev.label for ev in events}) != len(events):
        raise ValueError("measurement labels must be unique")
    reach = reach or light_cone_reach(theta0)
    rows = []
    for wl in _worldlines(carriers):
        row = []
        for t in grid:
            probe = wl.event_at(float(t))
            row.append(frozenset(ev.label for ev in events if reach(ev, probe)))
        rows.append(tuple(row))
    return BoundaryLedger(grid, tuple(rows), events)


def region_map(carriers, measurements: Sequence[Event], time_grid: Sequence[float],
               theta0: int | None = None) -> dict[tuple[int, int], str]:
    """(carrier, time bin) -> region name, the '+'-joined labels in measurement order."""
    ledger = build_ledger(carriers, measurements, time_grid, theta0)
    order = [ev.label for ev in ledger.events]
    out = {}
    for k, row in enumerate(ledger.labels):
        for j, labels in enumerate(row):
            out[(k, j)] = "+".join(lab for lab in order if lab in labels) or "none"
    return out


def write_region_csv(path, regions: Mapping[tuple[int, int], str], time_grid=None,
                     positions=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site", "time_bin", "time", "x", "region"])
        for (k, j) in sorted(regions):
            t = "" if time_grid is None else repr(float(time_grid[j]))
            x = "" if positions is None else repr(float(positions[k]))
            w.writerow([k, j, t, x, regions[(k, j)]])


@dataclass(frozen=True)
class Broadcast:
    """A projective event as the resolver sees it.

    ``vectors`` are the outcome eigenvectors on factor ``subsystem``; a
    ``subsystem`` of None means a joint projector onto ``vectors[0]``.
    """

    label: str
    t: float
    subsystem: int | None
    vectors: np.ndarray


class BoundaryResolver:
    """Turns label sets into boundary states, memoized per conditioning history."""

    def __init__(self, builder: "SegmentBuilder", start_state: np.ndarray, start_time: float,
                 broadcasts: Sequence[Broadcast], order: Callable[[str], float] | None = None):
        self.builder = builder
        self.dims = builder.model.dims
        self.start = (np.asarray(start_state, dtype=complex), float(start_time))
        self.broadcasts = {b.label: b for b in broadcasts}
        lab_order = {b.label: i for i, b in enumerate(broadcasts)}
        self.order = order or (lambda lab: lab_order[lab])
        self._memo: dict = {(): self.start}

    def project(self, b: Broadcast, outcome: int, psi: np.ndarray) -> np.ndarray:
        v = b.vectors[outcome]
        if b.subsystem is None:
            return v * np.vdot(v, psi)
        return apply_local(np.outer(v, v.conj()), b.subsystem, self.dims, psi)

    def resolve(self, labels: Iterable[str], outcomes: Mapping[str, int]):
        """Boundary ``(state, T)`` for a label set, or None if the branch vanished."""
        history = tuple((lab, outcomes[lab]) for lab in sorted(labels, key=self.order))
        return self._resolve(history)

    def _resolve(self, history):
        if history in self._memo:
            return self._memo[history]
        prev = self._resolve(history[:-1])
        result = None
        if prev is not None:
            lab, outcome = history[-1]
            b = self.broadcasts[lab]
            state, T = prev
            traj = self.builder.trajectory(prev, b.t, b.t)
            psi = self.project(b, outcome, traj.at(b.t))
            norm = np.linalg.norm(psi)
            if norm > ZERO_NORM:
                result = (psi / norm, b.t)
        self._memo[history] = result
        return result


@dataclass(frozen=True, eq=False)
class SegmentedPropagator:
    """Product of per-segment propagators, latest segment leftmost."""

    segments: tuple  # ((s, e, boundaries), ...)
    matrix: np.ndarray

    @property
    def split_times(self) -> list[float]:
        return [s for s, _, _ in self.segments[1:]]


def boundary_key(boundary) -> tuple:
    state, T = boundary
    return (np.ascontiguousarray(state).tobytes(), float(T))


class SegmentBuilder:
    """Builds and memoizes segment propagators for a system model."""

    def __init__(self, model: SystemModel, span: tuple[float, float], dt: float = DEFAULT_DT):
        self.model = model
        self.cache = TrajectoryCache(model, dt)
        self.span = (float(span[0]), float(span[1]))
        self.dt = dt
        self._local: dict = {}
        self._joint: dict = {}

    def trajectory(self, boundary, s: float, e: float):
        # always ask for the whole span so each boundary is solved once
        state, T = boundary
        return self.cache.get(state, T, min(s, e, self.span[0]), max(s, e, self.span[1]))

    def local(self, k: int, boundary, s: float, e: float) -> np.ndarray:
        key = (k, boundary_key(boundary), s, e)
        if key not in self._local:
            traj = self.trajectory(boundary, s, e)
            self._local[key] = local_propagator(self.model, k, traj, s, e, self.dt)
        return self._local[key]

    def joint(self, boundaries: Sequence, s: float, e: float) -> np.ndarray:
        keys = tuple(boundary_key(b) for b in boundaries)
        key = (keys, s, e)
        if key in self._joint:
            return self._joint[key]
        model = self.model
        if model.factorizable:
            mat = self.local(0, boundaries[0], s, e)
            for k in range(1, len(boundaries)):
                mat = np.kron(mat, self.local(k, boundaries[k], s, e))
        else:
            int_traj = None
            if model.nl_interaction is not None:
                if len(set(keys)) != 1:
                    raise ValueError("a non-linear interaction needs one shared boundary, "
                                     f"got {len(set(keys))} distinct ones on [{s}, {e}]")
                int_traj = self.trajectory(boundaries[0], s, e)
            trajs = [self.trajectory(b, s, e) for b in boundaries]
            mat = mixed_propagator(model, trajs, s, e, self.dt, int_traj)
        self._joint[key] = mat
        return mat


def segmented_propagator(builder: SegmentBuilder, ledger: BoundaryLedger,
                         resolver: BoundaryResolver, outcomes: Mapping[str, int],
                         subsystem: int | None, t_from: float, t_to: float
                         ) -> SegmentedPropagator | None:
    """Propagator over [t_from, t_to] split wherever the relevant ledger labels change.

    ``subsystem=None`` gives the joint propagator of every carrier; an index
    gives that factor's own propagator (factorizable models only).  Returns
    None when some boundary belongs to a vanished branch.
    """
    if t_to < t_from:
        raise ValueError("segmented propagation runs forward in time")
    carriers = range(ledger.n_carriers) if subsystem is None else [subsystem]
    if subsystem is not None and not builder.model.factorizable:
        raise ValueError("per-subsystem propagators need a model without cross-coupling")
    if ledger.time_grid[0] > t_from + GRID_ATOL or ledger.time_grid[-1] < t_to - GRID_ATOL:
        raise ValueError(f"ledger gap: grid does not cover [{t_from}, {t_to}]")
    cuts = sorted({t for k in carriers for t in ledger.change_times(k, t_from, t_to)})
    points = [t_from] + cuts + [t_to]
    dim = int(np.prod(builder.model.dims)) if subsystem is None else builder.model.dims[subsystem]
    total = np.eye(dim, dtype=complex)
    segments = []
    for s, e in zip(points, points[1:]):
        bounds = [resolver.resolve(ledger.labels_at(k, s), outcomes)
                  for k in range(ledger.n_carriers)]
        if subsystem is None:
            if any(b is None for b in bounds):
                return None
            mat = builder.joint(bounds, s, e)
            segments.append((s, e, tuple(bounds)))
        else:
            b = bounds[subsystem]
            if b is None:
                return None
            mat = builder.local(subsystem, b, s, e)
            segments.append((s, e, (b,)))
        total = mat @ total
    return SegmentedPropagator(tuple(segments), total)


def lab_grid(t_begin: float, t_end: float, dt: float, extra: Iterable[float] = ()) -> np.ndarray:
    """t_begin + k dt up to t_end, merged with ``extra`` times.

    Points closer than 1e-12 collapse onto the exact extra (or end) value, so
    event times appear in the grid bit-for-bit.
    """
    exact = sorted({float(t) for t in extra} | {float(t_begin), float(t_end)})
    n = int(math.floor((t_end - t_begin) / dt * (1 + 1e-12))) if t_end > t_begin else 0
    regular = t_begin + dt * np.arange(n + 1)
    out = list(exact)
    for t in regular:
        j = int(np.searchsorted(exact, t))
        near = [exact[i] for i in (j - 1, j) if 0 <= i < len(exact)]
        if all(abs(t - u) > GRID_ATOL * max(1.0, abs(t)) for u in near):
            out.append(float(t))
    return np.array(sorted(out))
