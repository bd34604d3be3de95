import logging
import math

import numpy as np
import pytest
import tomli_w
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_pair_scenario
from nlqm import bundled
from nlqm.dynamics import Kind
from nlqm.prescriptions import distribution
from nlqm.scenario_io import (
    ScenarioError,
    dump_scenario,
    is_lattice_file,
    load_lattice,
    load_scenario,
    parse_scenario,
    scenario_doc,
    write_scenario,
)
from nlqm.spacetime import CausalRelation, classify, in_future_cone

SCENARIO_FILES = ["bell_fig1", "five_event_fig5", "gpe_dimer", "sn_triple"]


def minimal(**over):
    doc = {
        "dims": [2],
        "initial_state": {"named": "up"},
        "preparation": {"label": "C", "t": 0.0, "x": 0.0},
        "model": {"parts": [{"kind": "weinberg", "lam": 0.2, "h_linear": "x",
                             "observable": "z", "response": "z"}]},
        "events": [{"label": "M", "t": 1.0, "x": 0.0, "subsystem": 0, "basis": "z"}],
    }
    doc.update(over)
    return doc


def assert_same(a, b):
    assert np.array_equal(a.initial_state.amps, b.initial_state.amps)
    assert a.preparation == b.preparation and a.dt == b.dt and a.theta0 == b.theta0
    assert [m.event for m in a.measurements] == [m.event for m in b.measurements]
    for ma, mb in zip(a.measurements, b.measurements):
        assert ma.subsystem == mb.subsystem
        assert np.array_equal(ma.basis.vectors, mb.basis.vectors)
    for pa, pb in zip(a.model.parts, b.model.parts):
        assert pa.kind is pb.kind and pa.lam == pb.lam
        assert np.array_equal(pa.h_linear.matrix, pb.h_linear.matrix)
    assert dump_scenario(a) == dump_scenario(b)


def test_bell_geometry(bell):
    a, b = bell.measurements
    assert (bell.preparation.t, bell.preparation.x) == (0.0, 0.0)
    assert (a.t, a.x, b.t, b.x) == (1.0, -1.0, 1.2, 1.0)
    assert classify(a.event, b.event) is CausalRelation.SPACELIKE


def test_five_event_geometry(five_event):
    a, e = five_event.measurement("A"), five_event.measurement("E")
    assert five_event.labels == ("A", "B", "E")
    assert five_event.source.event.label == "D"
    assert not in_future_cone(a.event, e.event)
    assert in_future_cone(five_event.measurement("B").event, e.event)


@pytest.mark.parametrize("name", SCENARIO_FILES)
def test_bundled_round_trip(tmp_path, name):
    sc = load_scenario(bundled(name))
    path = tmp_path / "copy.toml"
    write_scenario(sc, path)
    assert_same(sc, load_scenario(path))


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_random_round_trip(seed):
    sc = random_pair_scenario(seed)
    assert_same(sc, parse_scenario(scenario_doc(sc)))


def test_model_kinds_load():
    assert load_scenario(bundled("gpe_dimer")).model.parts[0].kind is Kind.ONSITE_CUBIC
    sn = load_scenario(bundled("sn_triple")).model.parts[0]
    assert sn.kind is Kind.SCHROEDINGER_NEWTON and sn.dims == (3,)


def test_empty_events_give_trivial_distribution():
    sc = parse_scenario(minimal(events=[]))
    assert list(distribution(sc, "causal").items()) == [((), 1.0)]


def test_amplitudes_and_renormalization(caplog):
    amps = {"amplitudes": [[3.0, 0.0], [0.0, 4.0]]}
    with caplog.at_level(logging.WARNING):
        sc = parse_scenario(minimal(initial_state=amps))
    assert np.allclose(sc.initial_state.amps, [0.6, 0.8j])
    assert "renormalized" in caplog.text
    caplog.clear()
    tiny = {"amplitudes": [[1.0 + 1e-9, 0.0], [0.0, 0.0]]}
    with caplog.at_level(logging.WARNING):
        sc = parse_scenario(minimal(initial_state=tiny))
    assert caplog.text == "" and sc.initial_state.amps[0] == 1.0


@pytest.mark.parametrize("bad,fragment", [
    ({"initial_state": {"amplitudes": [[0.0, 0.0], [0.0, 0.0]]}}, "not normalizable"),
    ({"initial_state": {"amplitudes": [[1.0, 0.0]]}}, "initial_state.amplitudes"),
    ({"initial_state": {"named": "bell"}}, "initial_state.named"),
    ({"dims": [1]}, "dims"),
    ({"dt": -1.0}, "dt"),
    ({"lightcone_theta0": 2}, "lightcone_theta0"),
    ({"colour": "red"}, "colour"),
    ({"preparation": {"t": 2.0, "x": 0.0}}, "acausal preparation"),
    ({"model": {"parts": [{"kind": "quartic"}]}}, "model.parts[0].kind"),
    ({"model": {"parts": [{"kind": "weinberg", "observable": "z"}]}}, "response"),
    ({"model": {"parts": [{"h_linear": "w"}]}}, "model.parts[0].h_linear"),
    ({"model": {"parts": [{"h_linear": {"re": [[0, 1], [0, 0]]}}]}}, "Hermitian"),
    ({"events": [{"t": 1.0, "x": 0.0, "subsystem": 3, "basis": "z"}]}, "events[0].subsystem"),
    ({"events": [{"t": 1.0, "x": 0.0, "subsystem": 0, "basis": "q"}]}, "events[0].basis"),
    ({"events": [{"t": "soon", "x": 0.0, "subsystem": 0, "basis": "z"}]}, "events[0].t"),
    ({"events": [{"t": 1.0, "x": 0.0, "subsystem": 0}]}, "basis"),
])
def test_schema_errors_name_the_field(bad, fragment):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(minimal(**bad))
    assert fragment in str(info.value)


def test_basis_forms(tmp_path):
    doc = minimal(events=[
        {"label": "a", "t": 1.0, "x": 0.0, "subsystem": 0, "basis": {"theta": math.pi / 2}},
        {"label": "b", "t": 2.0, "x": 0.0, "subsystem": 0,
         "basis": {"vectors": [[[0, 0], [1, 0]], [[1, 0], [0, 0]]]}},
    ])
    sc = parse_scenario(doc)
    assert np.allclose(sc.measurements[0].basis.vectors[0], [1 / math.sqrt(2)] * 2)
    assert np.array_equal(sc.measurements[1].basis.vectors, [[0, 1], [1, 0]])
    path = tmp_path / "s.toml"
    path.write_text(tomli_w.dumps(doc))
    assert_same(sc, load_scenario(path))


def test_theta0_override(tmp_path):
    assert load_scenario(bundled("bell_fig1"), theta0=0).theta0 == 0


def test_lattice_files():
    assert is_lattice_file(bundled("fig2_lattice"))
    assert not is_lattice_file(bundled("bell_fig1"))
    with pytest.raises(ScenarioError, match="lattice-only"):
        load_scenario(bundled("fig2_lattice"))
    spec = load_lattice(bundled("fig4_regions"))
    assert len(spec.site_positions) == 51 and len(spec.time_grid) == 46
    assert spec.time_grid[-1] == pytest.approx(4.5)
    assert [e.label for e in spec.events] == ["A", "B", "E"]


def test_malformed_toml(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("dims = [2\n")
    with pytest.raises(ScenarioError):
        load_scenario(path)
