"""1+1D event geometry in units with c = 1."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Sequence

# Value of the Heaviside step at lightlike contact.  1 means an event exactly
# on a light cone receives the outcome.
LIGHTCONE_THETA0 = 1

# Absolute slack on interval comparisons, so that lightlike pairs built from
# decimal coordinates are not misread because of rounding.
INTERVAL_ATOL = 1e-12


class CausalRelation(enum.Enum):
    TIMELIKE = "timelike"
    SPACELIKE = "spacelike"
    LIGHTLIKE = "lightlike"


@dataclass(frozen=True)
class Event:
    t: float
    x: float
    label: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.t) and math.isfinite(self.x)):
            raise ValueError(f"event coordinates must be finite, got ({self.t}, {self.x})")


def interval_squared(a: Event, b: Event) -> float:
    """(t_a - t_b)^2 - (x_a - x_b)^2; positive for timelike separation."""
    return (a.t - b.t) ** 2 - (a.x - b.x) ** 2


def in_future_cone(source: Event, probe: Event, theta0: int | None = None) -> bool:
    """True if ``probe`` lies in the causal future of ``source``.

    With ``theta0 = 1`` the cone surface (and the source point itself) counts
    as inside; with ``theta0 = 0`` only the strict interior does.
    """
    theta0 = LIGHTCONE_THETA0 if theta0 is None else theta0
    dt = probe.t - source.t
    s2 = interval_squared(source, probe)
    if theta0:
        return dt >= -INTERVAL_ATOL and s2 >= -INTERVAL_ATOL
    return dt > INTERVAL_ATOL and s2 > INTERVAL_ATOL


def classify(a: Event, b: Event) -> CausalRelation:
    s2 = interval_squared(a, b)
    if s2 > INTERVAL_ATOL:
        return CausalRelation.TIMELIKE
    if s2 < -INTERVAL_ATOL:
        return CausalRelation.SPACELIKE
    return CausalRelation.LIGHTLIKE


def boost(event: Event, rapidity: float) -> Event:
    """Lorentz boost with velocity tanh(rapidity) along +x."""
    ch, sh = math.cosh(rapidity), math.sinh(rapidity)
    return replace(event, t=ch * event.t - sh * event.x, x=ch * event.x - sh * event.t)


def boosted_time(t: float, x: float, rapidity: float) -> float:
    return math.cosh(rapidity) * t - math.sinh(rapidity) * x


def boost_reorder(events: Sequence[Event], rapidity: float) -> list[Event]:
    """Boost every event; the returned list is sorted by boosted time.

    Spacelike pairs may swap order, timelike pairs never do.  Ties keep the
    input order.
    """
    if not math.isfinite(rapidity):
        raise ValueError("rapidity must be finite")
    boosted = [boost(e, rapidity) for e in events]
    return sorted(boosted, key=lambda e: e.t)


def order_flips(a: Event, b: Event, rapidity: float) -> bool:
    ta, tb = boosted_time(a.t, a.x, rapidity), boosted_time(b.t, b.x, rapidity)
    return (a.t - b.t) * (ta - tb) < 0


@dataclass(frozen=True)
class Worldline:
    """Piecewise-linear path x(t) through time-sorted knots, constant outside them."""

    knots: tuple[tuple[float, float], ...]

    def __post_init__(self):
        knots = tuple(sorted((float(t), float(x)) for t, x in self.knots))
        if not knots:
            raise ValueError("worldline needs at least one knot")
        for (t0, x0), (t1, x1) in zip(knots, knots[1:]):
            if abs(x1 - x0) > (t1 - t0) + INTERVAL_ATOL:
                raise ValueError(f"worldline segment ({t0},{x0})->({t1},{x1}) is superluminal")
        object.__setattr__(self, "knots", knots)

    @classmethod
    def static(cls, x: float) -> "Worldline":
        return cls(((0.0, x),))

    def position(self, t: float) -> float:
        knots = self.knots
        if t <= knots[0][0]:
            return knots[0][1]
        for (t0, x0), (t1, x1) in zip(knots, knots[1:]):
            if t <= t1:
                if t == t1 or t1 == t0:
                    return x1
                return x0 + (x1 - x0) * (t - t0) / (t1 - t0)
        return knots[-1][1]

    def event_at(self, t: float, label: str = "") -> Event:
        return Event(t, self.position(t), label)
