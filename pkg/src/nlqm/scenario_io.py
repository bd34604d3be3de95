"""TOML scenario files.

Layout (every table except ``initial_state``, ``preparation`` and
``model.parts`` is optional)::

    name = "bell"
    dims = [2, 2]
    dt = 0.001
    lightcone_theta0 = 1

    [initial_state]
    named = "bell"                      # or amplitudes = [[re, im], ...]

    [preparation]
    label = "C"
    t = 0.0
    x = 0.0

    [source]                            # earlier preparation, filtered at C
    label = "D"
    t = -1.0
    x = 0.0
    state = { named = "up" }

    [[model.parts]]                     # one per factor
    kind = "weinberg"
    lam = 0.5
    h_linear = "zero"                   # Pauli name, "zero", or {re = [[..]], im = [[..]]}
    observable = "z"
    response = "z"

    [model.interaction]                 # optional linear coupling on the joint space
    re = [[...]]

    [[events]]
    label = "A"
    t = 1.0
    x = -1.0
    subsystem = 0
    basis = { theta = 0.0, phi = 0.0 }  # or "z" / "x" / "y", or { vectors = [...] }

A ``[lattice]`` table (``site_positions``, ``time_grid``) turns a file into a
region-map input; its events need only ``label``, ``t`` and ``x``.
"""
from __future__ import annotations

import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .dynamics import Kind, NonlinearModel, SystemModel
from .hilbert import (
    PAULI,
    Basis,
    LinearOperator,
    StateVector,
    bloch_basis,
    named_basis,
    named_state,
)
from .prescriptions import MeasurementEvent, Scenario, Source
from .spacetime import Event, Worldline

log = logging.getLogger(__name__)

# Amplitude lists off by more than this are renormalized; more than
# RENORM_WARN and a warning is logged.
RENORM_TOL = 1e-14
RENORM_WARN = 1e-6

TOP_KEYS = {"name", "dims", "dt", "lightcone_theta0", "initial_state", "preparation",
            "source", "model", "events", "lattice"}
PART_KEYS = {"kind", "lam", "h_linear", "observable", "response", "weights", "positions",
             "softening", "mass"}


class ScenarioError(ValueError):
    """Schema or consistency problem in a scenario file, with the offending field."""


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ScenarioError(f"{where}: missing required key {key!r}")
    return table[key]


def _check_keys(table: Any, allowed: set, where: str) -> dict:
    if not isinstance(table, dict):
        raise ScenarioError(f"{where}: expected a table")
    extra = set(table) - allowed
    if extra:
        raise ScenarioError(f"{where}: unknown key(s) {sorted(extra)}")
    return table


def _float(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _complex(re, im) -> np.ndarray:
    # componentwise, so signed zeros survive a write/read cycle
    out = np.empty(np.shape(re), dtype=complex)
    out.real, out.imag = re, im
    return out


def _matrix(spec, dim: int, where: str) -> np.ndarray:
    if isinstance(spec, str):
        name = spec.lower()
        if name == "zero":
            return np.zeros((dim, dim), dtype=complex)
        if name in PAULI and dim == 2:
            return PAULI[name].copy()
        raise ScenarioError(f"{where}: unknown matrix name {spec!r}")
    _check_keys(spec, {"re", "im"}, where)
    try:
        re = np.array(_require(spec, "re", where), dtype=float)
        im = np.array(spec.get("im", np.zeros_like(re)), dtype=float)
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}")
    if re.shape != (dim, dim) or im.shape != (dim, dim):
        raise ScenarioError(f"{where}: expected a {dim}x{dim} matrix, got {re.shape}")
    return _complex(re, im)


def _amplitudes(spec, dims: tuple, where: str) -> StateVector:
    _check_keys(spec, {"named", "amplitudes"}, where)
    if ("named" in spec) == ("amplitudes" in spec):
        raise ScenarioError(f"{where}: give exactly one of 'named' or 'amplitudes'")
    if "named" in spec:
        name = spec["named"]
        try:
            if name == "product":
                return named_state("up", dims)
            return named_state(name, dims)
        except ValueError as exc:
            raise ScenarioError(f"{where}.named: {exc}")
    try:
        pairs = np.array(spec["amplitudes"], dtype=float)
    except ValueError as exc:
        raise ScenarioError(f"{where}.amplitudes: {exc}")
    if pairs.ndim != 2 or pairs.shape[1] != 2 or len(pairs) != int(np.prod(dims)):
        raise ScenarioError(f"{where}.amplitudes: need {int(np.prod(dims))} [re, im] pairs")
    amps = _complex(pairs[:, 0], pairs[:, 1])
    norm = float(np.linalg.norm(amps))
    if not norm > 0 or not np.isfinite(norm):
        raise ScenarioError(f"{where}.amplitudes: state is not normalizable (norm {norm})")
    if abs(norm - 1.0) > RENORM_TOL:
        if abs(norm - 1.0) > RENORM_WARN:
            log.warning("%s: amplitudes renormalized (norm was %.9g)", where, norm)
        amps = amps / norm
    return StateVector(dims, amps)


def _event(spec, where: str, extra: set = frozenset()) -> Event:
    _check_keys(spec, {"label", "t", "x"} | set(extra), where)
    try:
        return Event(_float(_require(spec, "t", where), f"{where}.t"),
                     _float(_require(spec, "x", where), f"{where}.x"), str(spec.get("label", "")))
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}")


def _basis(spec, subsystem: int, dim: int, where: str) -> Basis:
    try:
        if isinstance(spec, str):
            return named_basis(subsystem, spec)
        _check_keys(spec, {"theta", "phi", "vectors"}, where)
        if "vectors" in spec:
            vecs = np.array(spec["vectors"], dtype=float)
            if vecs.shape != (dim, dim, 2):
                raise ScenarioError(f"{where}.vectors: need {dim} vectors of {dim} [re, im] pairs")
            return Basis(subsystem, _complex(vecs[..., 0], vecs[..., 1]))
        if dim != 2:
            raise ScenarioError(f"{where}: Bloch angles only describe qubit bases")
        return bloch_basis(subsystem, _float(_require(spec, "theta", where), f"{where}.theta"),
                           _float(spec.get("phi", 0.0), f"{where}.phi"))
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}")


def _part(spec, dim: int, where: str) -> NonlinearModel:
    _check_keys(spec, PART_KEYS, where)
    try:
        kind = Kind(spec.get("kind", "none"))
    except ValueError:
        raise ScenarioError(f"{where}.kind: unknown kind {spec.get('kind')!r}; "
                            f"choose from {[k.value for k in Kind]}")
    h = _matrix(spec.get("h_linear", "zero"), dim, f"{where}.h_linear")
    params: dict = {}
    if kind is Kind.WEINBERG:
        params["observable"] = _matrix(_require(spec, "observable", where), dim, f"{where}.observable")
        params["response"] = _matrix(_require(spec, "response", where), dim, f"{where}.response")
    for key in ("weights", "positions"):
        if key in spec:
            params[key] = np.array(spec[key], dtype=float)
    for key in ("softening", "mass"):
        if key in spec:
            params[key] = _float(spec[key], f"{where}.{key}")
    try:
        return NonlinearModel(LinearOperator((dim,), h), kind,
                              _float(spec.get("lam", 0.0), f"{where}.lam"), params)
    except ValueError as exc:
        raise ScenarioError(f"{where}: {exc}")


def _dims(doc) -> tuple[int, ...]:
    dims = _require(doc, "dims", "top level")
    if not isinstance(dims, list) or not dims or not all(isinstance(d, int) and d >= 2 for d in dims):
        raise ScenarioError(f"dims: expected a list of integers >= 2, got {dims!r}")
    return tuple(dims)


def parse_scenario(doc: dict, theta0: int | None = None) -> Scenario:
    """Build a Scenario from a parsed TOML document."""
    _check_keys(doc, TOP_KEYS, "top level")
    if "lattice" in doc and "model" not in doc:
        raise ScenarioError("lattice-only file: it describes a region map, not a scenario")
    dims = _dims(doc)
    dt = _float(doc.get("dt", 1e-3), "dt")
    if not dt > 0:
        raise ScenarioError(f"dt: must be positive, got {dt}")
    th = doc.get("lightcone_theta0", 1) if theta0 is None else theta0
    if th not in (0, 1):
        raise ScenarioError(f"lightcone_theta0: must be 0 or 1, got {th!r}")
    psi = _amplitudes(_require(doc, "initial_state", "top level"), dims, "initial_state")
    prep = _event(_require(doc, "preparation", "top level"), "preparation")
    source = None
    if "source" in doc:
        src = doc["source"]
        _check_keys(src, {"label", "t", "x", "state"}, "source")
        source = Source(_amplitudes(_require(src, "state", "source"), dims, "source.state"),
                        _event({k: v for k, v in src.items() if k != "state"}, "source"))
    model_doc = _check_keys(_require(doc, "model", "top level"),
                            {"parts", "interaction"}, "model")
    parts_doc = _require(model_doc, "parts", "model")
    if not isinstance(parts_doc, list) or len(parts_doc) != len(dims):
        raise ScenarioError(f"model.parts: need one entry per factor ({len(dims)})")
    parts = tuple(_part(p, d, f"model.parts[{k}]") for k, (p, d) in enumerate(zip(parts_doc, dims)))
    interaction = None
    if "interaction" in model_doc:
        n = int(np.prod(dims))
        interaction = LinearOperator(dims, _matrix(model_doc["interaction"], n, "model.interaction"))
    try:
        model = SystemModel(parts, interaction)
    except ValueError as exc:
        raise ScenarioError(f"model: {exc}")
    events = []
    for i, ev in enumerate(doc.get("events", [])):
        where = f"events[{i}]"
        e = _event(ev, where, {"subsystem", "basis"})
        k = _require(ev, "subsystem", where)
        if not isinstance(k, int) or not 0 <= k < len(dims):
            raise ScenarioError(f"{where}.subsystem: must be an index below {len(dims)}, got {k!r}")
        basis = _basis(_require(ev, "basis", where), k, dims[k], f"{where}.basis")
        events.append(MeasurementEvent(e, k, basis))
    try:
        return Scenario(psi, prep, model, tuple(events), dt, source, th, str(doc.get("name", "")))
    except ValueError as exc:
        raise ScenarioError(str(exc))


def _read(path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(f"{path}: {exc}")


def is_lattice_file(path) -> bool:
    doc = _read(path)
    return "lattice" in doc and "model" not in doc


def load_scenario(path, theta0: int | None = None) -> Scenario:
    return parse_scenario(_read(path), theta0)


def _pairs(amps: np.ndarray) -> list:
    return [[float(a.real), float(a.imag)] for a in np.ravel(amps)]


def _mat_doc(mat: np.ndarray) -> dict:
    mat = np.asarray(mat)
    return {"re": mat.real.tolist(), "im": mat.imag.tolist()}


def _part_doc(part: NonlinearModel) -> dict:
    out = {"kind": part.kind.value, "lam": float(part.lam), "h_linear": _mat_doc(part.h_linear.matrix)}
    p = part.params
    if part.kind is Kind.WEINBERG:
        out["observable"] = _mat_doc(p["observable"])
        out["response"] = _mat_doc(p["response"])
    elif part.kind is Kind.ONSITE_CUBIC:
        out["weights"] = p["weights"].tolist()
    elif part.kind is Kind.SCHROEDINGER_NEWTON:
        out["positions"] = p["positions"].tolist()
        out["softening"] = p["softening"]
        out["mass"] = p["mass"]
    return out


def scenario_doc(sc: Scenario) -> dict:
    """Canonical document: explicit matrices, amplitudes and basis vectors."""
    if sc.model.nl_interaction is not None:
        raise ValueError("scenario files cannot express a non-linear interaction term")
    doc: dict = {"name": sc.name, "dims": list(sc.dims), "dt": sc.dt,
                 "lightcone_theta0": sc.theta0,
                 "initial_state": {"amplitudes": _pairs(sc.initial_state.amps)},
                 "preparation": {"label": sc.preparation.label, "t": sc.preparation.t,
                                 "x": sc.preparation.x}}
    if sc.source is not None:
        e = sc.source.event
        doc["source"] = {"label": e.label, "t": e.t, "x": e.x,
                         "state": {"amplitudes": _pairs(sc.source.state.amps)}}
    doc["model"] = {"parts": [_part_doc(p) for p in sc.model.parts]}
    if sc.model.interaction is not None:
        doc["model"]["interaction"] = _mat_doc(sc.model.interaction.matrix)
    doc["events"] = [{"label": m.label, "t": m.t, "x": m.x, "subsystem": m.subsystem,
                      "basis": {"vectors": [_pairs(v) for v in m.basis.vectors]}}
                     for m in sc.measurements]
    return doc


def dump_scenario(sc: Scenario) -> str:
    return tomli_w.dumps(scenario_doc(sc))


def write_scenario(sc: Scenario, path) -> None:
    Path(path).write_text(dump_scenario(sc))


@dataclass(frozen=True, eq=False)
class LatticeSpec:
    """Carriers, broadcasting events and time grid of a region-map file."""

    site_positions: tuple[float, ...]
    events: tuple[Event, ...]
    time_grid: np.ndarray
    theta0: int = 1
    name: str = ""

    @property
    def carriers(self) -> tuple[Worldline, ...]:
        return tuple(Worldline.static(x) for x in self.site_positions)


def _grid(spec, where: str) -> np.ndarray:
    if isinstance(spec, list):
        return np.array([_float(v, where) for v in spec])
    _check_keys(spec, {"start", "step", "n"}, where)
    start = _float(_require(spec, "start", where), f"{where}.start")
    step = _float(_require(spec, "step", where), f"{where}.step")
    n = _require(spec, "n", where)
    if not isinstance(n, int) or n < 1 or not step > 0:
        raise ScenarioError(f"{where}: need n >= 1 and step > 0")
    return start + step * np.arange(n)


def load_lattice(path, theta0: int | None = None) -> LatticeSpec:
    doc = _read(path)
    lat = _check_keys(_require(doc, "lattice", "top level"),
                      {"site_positions", "time_grid"}, "lattice")
    positions = _grid(_require(lat, "site_positions", "lattice"), "lattice.site_positions")
    grid = _grid(_require(lat, "time_grid", "lattice"), "lattice.time_grid")
    if len(positions) == 0 or len(grid) == 0 or np.any(np.diff(grid) <= 0):
        raise ScenarioError("lattice: need sites and a strictly increasing time grid")
    events = tuple(_event(ev, f"events[{i}]", {"subsystem", "basis", "site"})
                   for i, ev in enumerate(doc.get("events", [])))
    events = tuple(sorted(events, key=lambda e: e.t))
    th = doc.get("lightcone_theta0", 1) if theta0 is None else theta0
    if th not in (0, 1):
        raise ScenarioError(f"lightcone_theta0: must be 0 or 1, got {th!r}")
    return LatticeSpec(tuple(float(x) for x in positions), events, grid, th,
                       str(doc.get("name", "")))
