"""Measurement prescriptions: which boundary drives which propagator.

Every prescription evaluates the same Born-rule chain

    psi_N = P_N U(t_N, t_{N-1}) ... P_1 U(t_1, t_0) Psi,
    p(outcomes) = |psi_N|^2 / Norm,

and they differ only in how the propagators U are built:

* ``sqm``: the linear Hamiltonian alone (lam forced to 0).
* ``everett`` / ``preselection``: one fixed boundary for everything, the
  universal state (or the experiment's initial state).
* ``postselection``: the product of the final outcome vectors at the last
  measurement time.
* ``collapse``: the boundary is the conditioned state, updated on an
  equal-time surface of a chosen frame.
* ``causal``: each carrier's boundary is conditioned only on outcomes in its
  past light cone.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .dynamics import DEFAULT_DT, SystemModel, linear_propagator
from .hilbert import Basis, StateVector, apply_local
from .lattice import (
    ZERO_NORM,
    Broadcast,
    BoundaryResolver,
    SegmentBuilder,
    build_ledger,
    lab_grid,
    light_cone_reach,
    segmented_propagator,
    simultaneity_reach,
)
from .spacetime import (
    LIGHTCONE_THETA0,
    Event,
    Worldline,
    boosted_time,
    in_future_cone,
)

PRESCRIPTIONS = ("sqm", "everett", "preselection", "postselection", "collapse", "causal")
ALIASES = {"causal_conditional": "causal", "causal-conditional": "causal",
           "standard": "sqm", "pre": "preselection", "post": "postselection"}
NORMALIZED_TOL = 1e-12
PROB_SUM_TOL = 1e-9
POSITION_TOL = 1e-9


def canonical_name(prescription: str) -> str:
    name = ALIASES.get(prescription.lower(), prescription.lower())
    if name not in PRESCRIPTIONS:
        raise ValueError(f"unknown prescription {prescription!r}; choose from {PRESCRIPTIONS}")
    return name


@dataclass(frozen=True, eq=False)
class MeasurementEvent:
    event: Event
    subsystem: int
    basis: Basis

    def __post_init__(self):
        if self.basis.subsystem != self.subsystem:
            raise ValueError(f"basis belongs to subsystem {self.basis.subsystem}, "
                             f"event measures {self.subsystem}")

    @property
    def label(self) -> str:
        return self.event.label

    @property
    def t(self) -> float:
        return self.event.t

    @property
    def x(self) -> float:
        return self.event.x

    @property
    def n_outcomes(self) -> int:
        return self.basis.dim


@dataclass(frozen=True, eq=False)
class Source:
    """An earlier preparation; its state is filtered onto the initial state at
    the preparation event."""

    state: StateVector
    event: Event


@dataclass(frozen=True, eq=False)
class Scenario:
    """Initial state, dynamics and measurement events of one experiment.

    Measurements are stored sorted by lab time (ties keep input order).
    Subsystem ``k`` travels along ``worldlines[k]``; the default path runs
    through the source, the preparation event and every measurement of ``k``.
    """

    initial_state: StateVector
    preparation: Event
    model: SystemModel
    measurements: tuple[MeasurementEvent, ...] = ()
    dt: float = DEFAULT_DT
    source: Source | None = None
    theta0: int = LIGHTCONE_THETA0
    name: str = ""
    worldlines: tuple[Worldline, ...] | None = None

    def __post_init__(self):
        dims = self.model.dims
        if self.initial_state.dims != dims:
            raise ValueError(f"initial state dims {self.initial_state.dims} != model dims {dims}")
        if not self.initial_state.is_normalized(NORMALIZED_TOL):
            raise ValueError(f"initial state is not normalized (norm {self.initial_state.norm()})")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if self.theta0 not in (0, 1):
            raise ValueError("theta0 must be 0 or 1")
        ms = []
        for i, m in enumerate(self.measurements):
            if not m.label:
                m = replace(m, event=replace(m.event, label=f"M{i + 1}"))
            if not 0 <= m.subsystem < len(dims):
                raise ValueError(f"event {m.label!r} measures missing subsystem {m.subsystem}")
            if m.basis.dim != dims[m.subsystem]:
                raise ValueError(f"event {m.label!r}: basis dim {m.basis.dim} != {dims[m.subsystem]}")
            if not in_future_cone(self.preparation, m.event, theta0=1):
                raise ValueError(f"acausal preparation: event {m.label!r} at ({m.t}, {m.x}) is "
                                 "not in the future light cone of the preparation")
            ms.append(m)
        ms.sort(key=lambda m: m.t)
        object.__setattr__(self, "measurements", tuple(ms))
        labels = [m.label for m in ms] + [self.prep_label]
        if len(set(labels)) != len(labels):
            raise ValueError(f"event labels must be unique, got {labels}")
        if self.source is not None:
            if self.source.state.dims != dims or not self.source.state.is_normalized(NORMALIZED_TOL):
                raise ValueError("source state must be a normalized state of the system")
            if not in_future_cone(self.source.event, self.preparation, theta0=1):
                raise ValueError("source must lie in the causal past of the preparation")
        if self.worldlines is None:
            object.__setattr__(self, "worldlines", self._default_worldlines())
        else:
            wls = tuple(self.worldlines)
            if len(wls) != len(dims):
                raise ValueError(f"need {len(dims)} worldlines, got {len(wls)}")
            for m in ms:
                if abs(wls[m.subsystem].position(m.t) - m.x) > POSITION_TOL:
                    raise ValueError(f"event {m.label!r} is off the worldline of subsystem {m.subsystem}")
            object.__setattr__(self, "worldlines", wls)

    def _default_worldlines(self) -> tuple[Worldline, ...]:
        head = [(self.preparation.t, self.preparation.x)]
        if self.source is not None:
            head.insert(0, (self.source.event.t, self.source.event.x))
        out = []
        for k in range(len(self.model.dims)):
            knots = head + [(m.t, m.x) for m in self.measurements if m.subsystem == k]
            try:
                out.append(Worldline(tuple(knots)))
            except ValueError as exc:
                raise ValueError(f"measurements of subsystem {k} cannot lie on one worldline: {exc}")
        return tuple(out)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.model.dims

    @property
    def prep_label(self) -> str:
        return self.preparation.label or "prep"

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(m.label for m in self.measurements)

    @property
    def t_begin(self) -> float:
        return self.source.event.t if self.source is not None else self.preparation.t

    @property
    def t_end(self) -> float:
        return max([self.preparation.t] + [m.t for m in self.measurements])

    def measurement(self, label: str) -> MeasurementEvent:
        for m in self.measurements:
            if m.label == label:
                return m
        raise KeyError(f"no measurement labelled {label!r}")

    def with_lambda(self, lam: float) -> "Scenario":
        return replace(self, model=self.model.with_lambda(lam))

    def with_dt(self, dt: float) -> "Scenario":
        return replace(self, dt=dt)

    def with_measurements(self, measurements: Sequence[MeasurementEvent]) -> "Scenario":
        return replace(self, measurements=tuple(measurements), worldlines=None)

    def with_basis(self, label: str, basis: Basis) -> "Scenario":
        ms = [replace(m, basis=basis) if m.label == label else m for m in self.measurements]
        if all(m.label != label for m in self.measurements):
            raise KeyError(f"no measurement labelled {label!r}")
        return self.with_measurements(ms)

    def without(self, label: str) -> "Scenario":
        self.measurement(label)
        return self.with_measurements([m for m in self.measurements if m.label != label])


@dataclass(frozen=True, eq=False)
class OutcomeDistribution:
    """Joint outcome probabilities, indexed by outcome per measurement label."""

    labels: tuple[str, ...]
    probs: np.ndarray
    normalizer: float
    prescription: str = ""

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != len(self.labels):
            raise ValueError("probability array rank must match the number of labels")
        if np.any(p < -1e-12):
            raise ValueError(f"negative probability {p.min():.3g}")
        p = np.clip(p, 0.0, None)
        if abs(p.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {p.sum():.12g}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def p(self, outcomes: Sequence[int] | Mapping[str, int]) -> float:
        if isinstance(outcomes, Mapping):
            outcomes = [outcomes[lab] for lab in self.labels]
        return float(self.probs[tuple(outcomes)])

    def marginal(self, label: str) -> np.ndarray:
        i = self.labels.index(label)
        axes = tuple(j for j in range(len(self.labels)) if j != i)
        return self.probs.sum(axis=axes)

    def items(self):
        for idx in itertools.product(*(range(n) for n in self.probs.shape)):
            yield idx, float(self.probs[idx])

    def total_variation(self, other: "OutcomeDistribution") -> float:
        if self.labels != other.labels:
            raise ValueError("distributions over different events")
        return 0.5 * float(np.abs(self.probs - other.probs).sum())

    def max_abs_diff(self, other: "OutcomeDistribution") -> float:
        if self.labels != other.labels:
            raise ValueError("distributions over different events")
        return float(np.max(np.abs(self.probs - other.probs)))


def make_builder(scenario: Scenario) -> SegmentBuilder:
    """Segment builder that several evaluations of one model may share.

    Propagators are memoized by boundary and interval, so a basis sweep
    reuses every segment whose boundary does not depend on the swept basis.
    """
    return SegmentBuilder(scenario.model, (scenario.t_begin, scenario.t_end), scenario.dt)


class Evaluator:
    """Builds propagators for one prescription and runs the outcome chain.

    ``rapidity`` only matters for ``collapse``: the conditioned state is
    updated on equal-time surfaces of that frame.  ``universe`` overrides
    the Everett boundary with ``(state, t_ini)``.
    """

    def __init__(self, scenario: Scenario, prescription: str, rapidity: float = 0.0,
                 universe: tuple[StateVector, float] | None = None,
                 builder: SegmentBuilder | None = None):
        self.scenario = sc = scenario
        self.name = canonical_name(prescription)
        self.rapidity = float(rapidity)
        dims = sc.dims
        self.builder = builder if builder is not None else make_builder(sc)
        if self.builder.model is not sc.model or self.builder.dt != sc.dt:
            raise ValueError("shared segment builder belongs to a different model or dt")

        self.broadcasts: list[Broadcast] = []
        if sc.source is not None:
            self.broadcasts.append(Broadcast(sc.prep_label, sc.preparation.t, None,
                                             np.array([sc.initial_state.amps])))
        for m in sc.measurements:
            self.broadcasts.append(Broadcast(m.label, m.t, m.subsystem, np.asarray(m.basis.vectors)))
        if sc.source is not None:
            self.start = (np.asarray(sc.source.state.amps), sc.source.event.t)
        else:
            self.start = (np.asarray(sc.initial_state.amps), sc.preparation.t)

        self._h_lin = None
        self._fixed = None
        self.ledger = self.resolver = None
        if self.name == "sqm":
            self._h_lin = sc.model.linear_hamiltonian()
        elif self.name in ("everett", "preselection"):
            if universe is None or self.name == "preselection":
                universe = (sc.initial_state, sc.preparation.t)
            state, t_ini = universe
            if state.dims != dims or not state.is_normalized(1e-9):
                raise ValueError("universal state must be a normalized state of the system")
            self._fixed = (np.asarray(state.amps), float(t_ini))
        elif self.name == "postselection":
            measured = {m.subsystem for m in sc.measurements}
            missing = sorted(set(range(len(dims))) - measured)
            if missing:
                raise ValueError(f"post-selection needs a final outcome on every subsystem; "
                                 f"subsystems {missing} are never measured")
        else:
            events = [Event(b.t, self._x_of(b), b.label) for b in self.broadcasts]
            if self.name == "collapse":
                reach = simultaneity_reach(self.rapidity)
                bt = {e.label: boosted_time(e.t, e.x, self.rapidity) for e in events}
                order = lambda lab: bt[lab]
            else:
                reach = light_cone_reach(sc.theta0)
                order = None
            grid = lab_grid(sc.t_begin, sc.t_end, sc.dt, [e.t for e in events])
            self.ledger = build_ledger(sc.worldlines, events, grid, reach=reach)
            self.resolver = BoundaryResolver(self.builder, self.start[0], self.start[1],
                                             self.broadcasts, order)
        self._lin_cache: dict = {}

    def _x_of(self, b: Broadcast) -> float:
        sc = self.scenario
        if b.subsystem is None:
            return sc.preparation.x
        return sc.measurement(b.label).x

    # boundaries ---------------------------------------------------------

    def _outcome_map(self, outcomes) -> dict[str, int]:
        sc = self.scenario
        if isinstance(outcomes, Mapping):
            out = {lab: int(outcomes[lab]) for lab in sc.labels}
        else:
            outcomes = tuple(outcomes)
            if len(outcomes) != len(sc.labels):
                raise ValueError(f"expected {len(sc.labels)} outcomes, got {len(outcomes)}")
            out = dict(zip(sc.labels, (int(o) for o in outcomes)))
        for m in sc.measurements:
            if not 0 <= out[m.label] < m.n_outcomes:
                raise ValueError(f"outcome {out[m.label]} out of range for event {m.label!r}")
        out[sc.prep_label] = 0
        return out

    def _postselected(self, outcomes: Mapping[str, int]):
        sc = self.scenario
        last = {}
        for m in sc.measurements:
            last[m.subsystem] = m.basis.vectors[outcomes[m.label]]
        state = last[0]
        for k in range(1, len(sc.dims)):
            state = np.kron(state, last[k])
        return (state, sc.measurements[-1].t)

    def boundary(self, subsystem: int, t: float, outcomes) -> tuple | None:
        """The boundary ``(state, T)`` driving ``subsystem`` just after time ``t``."""
        outcomes = self._outcome_map(outcomes)
        if self.name == "sqm":
            return None
        if self._fixed is not None:
            return self._fixed
        if self.name == "postselection":
            return self._postselected(outcomes)
        return self.resolver.resolve(self.ledger.labels_at(subsystem, t), outcomes)

    # propagators --------------------------------------------------------

    def propagator(self, t_from: float, t_to: float, outcomes: Mapping[str, int]):
        """Joint propagator over [t_from, t_to] in a branch, None if the branch vanished."""
        if t_to == t_from:
            return np.eye(int(np.prod(self.scenario.dims)), dtype=complex)
        if self._h_lin is not None:
            key = t_to - t_from
            if key not in self._lin_cache:
                self._lin_cache[key] = linear_propagator(self._h_lin, key)
            return self._lin_cache[key]
        n = len(self.scenario.dims)
        if self._fixed is not None:
            return self.builder.joint([self._fixed] * n, t_from, t_to)
        if self.name == "postselection":
            return self.builder.joint([self._postselected(outcomes)] * n, t_from, t_to)
        seg = segmented_propagator(self.builder, self.ledger, self.resolver, outcomes,
                                   None, t_from, t_to)
        return None if seg is None else seg.matrix

    def _project(self, b: Broadcast, outcome: int, psi: np.ndarray) -> np.ndarray:
        v = b.vectors[outcome]
        if b.subsystem is None:
            return v * np.vdot(v, psi)
        return apply_local(np.outer(v, v.conj()), b.subsystem, self.scenario.dims, psi)

    # chains --------------------------------------------------------------

    def conditional_state(self, outcomes) -> np.ndarray:
        """Unnormalized state at the last event time; zero for a vanished branch."""
        out = self._outcome_map(outcomes)
        psi, t = self.start
        psi = np.array(psi, dtype=complex)
        for b in self.broadcasts:
            U = self.propagator(t, b.t, out)
            if U is None:
                return np.zeros_like(psi)
            psi = self._project(b, out[b.label], U @ psi)
            if np.linalg.norm(psi) <= ZERO_NORM:
                return np.zeros_like(psi)
            t = b.t
        return psi

    def heisenberg_weight(self, outcomes, order: Sequence[str]) -> float:
        """Branch weight with projectors in Heisenberg form, applied in ``order``.

        P_i(t) = W_i^dagger P_i W_i with W_i the branch propagator from the
        start to event i.  Independent of the Schroedinger chain's ordering.
        """
        out = self._outcome_map(outcomes)
        psi, t = self.start
        psi = np.array(psi, dtype=complex)
        dim = psi.size
        W = np.eye(dim, dtype=complex)
        ws = {}
        for b in self.broadcasts:
            U = self.propagator(t, b.t, out)
            if U is None:
                return 0.0
            W = U @ W
            ws[b.label] = W
            t = b.t
        by_label = {b.label: b for b in self.broadcasts}
        for lab in order:
            b, W = by_label[lab], ws[lab]
            psi = W.conj().T @ self._project(b, out[lab], W @ psi)
        return float(np.vdot(psi, psi).real)

    def weights(self) -> np.ndarray:
        sc = self.scenario
        shape = tuple(m.n_outcomes for m in sc.measurements)
        w = np.zeros(shape)
        for idx in itertools.product(*(range(n) for n in shape)):
            psi = self.conditional_state(idx)
            w[idx] = float(np.vdot(psi, psi).real)
        return w

    def distribution(self) -> OutcomeDistribution:
        return _normalize(self.scenario, self.weights(), self.name)

    def heisenberg_distribution(self, order: Sequence[str]) -> OutcomeDistribution:
        sc = self.scenario
        shape = tuple(m.n_outcomes for m in sc.measurements)
        w = np.zeros(shape)
        for idx in itertools.product(*(range(n) for n in shape)):
            w[idx] = self.heisenberg_weight(idx, order)
        return _normalize(sc, w, self.name)


def _normalize(sc: Scenario, w: np.ndarray, name: str) -> OutcomeDistribution:
    total = float(w.sum())
    if not total > 0:
        raise ValueError("every outcome branch vanished; the distribution is undefined")
    return OutcomeDistribution(sc.labels, w / total, total, name)


def distribution(scenario: Scenario, prescription: str, **kwargs) -> OutcomeDistribution:
    return Evaluator(scenario, prescription, **kwargs).distribution()


def sqm_distribution(scenario: Scenario) -> OutcomeDistribution:
    return distribution(scenario, "sqm")


def preselection_distribution(scenario: Scenario) -> OutcomeDistribution:
    return distribution(scenario, "preselection")


def everett_distribution(scenario: Scenario, universe_state: StateVector | None = None,
                         t_ini: float | None = None) -> OutcomeDistribution:
    universe = None
    if universe_state is not None:
        universe = (universe_state, scenario.preparation.t if t_ini is None else t_ini)
    return Evaluator(scenario, "everett", universe=universe).distribution()


def postselection_distribution(scenario: Scenario) -> OutcomeDistribution:
    return distribution(scenario, "postselection")


def collapse_distribution(scenario: Scenario, rapidity: float = 0.0) -> OutcomeDistribution:
    return Evaluator(scenario, "collapse", rapidity=rapidity).distribution()


def causal_conditional_distribution(scenario: Scenario) -> OutcomeDistribution:
    return distribution(scenario, "causal")


def conditional_state(scenario: Scenario, prescription: str, outcomes, **kwargs) -> StateVector:
    """Unnormalized conditioned state; its squared norm is the unnormalized probability."""
    psi = Evaluator(scenario, prescription, **kwargs).conditional_state(outcomes)
    return StateVector(scenario.dims, psi)
