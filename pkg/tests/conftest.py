import math
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from nlqm import bundled
from nlqm.dynamics import NonlinearModel, SystemModel
from nlqm.hilbert import (
    SIGMA_Z,
    LinearOperator,
    bloch_basis,
    random_basis,
    random_hermitian,
    random_state,
)
from nlqm.prescriptions import MeasurementEvent, Scenario
from nlqm.scenario_io import load_scenario
from nlqm.spacetime import Event

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def weinberg_part(lam=0.5, h=None, obs=SIGMA_Z, resp=SIGMA_Z):
    h = np.zeros((2, 2)) if h is None else h
    return NonlinearModel(LinearOperator((2,), h), "weinberg", lam,
                          {"observable": obs, "response": resp})


def bell_pair(lam=0.5, alice=(0.0, 0.0), bob=(math.pi / 2, math.pi / 2), h=None, dt=1e-3):
    """Bell pair from C(0,0), Alice at A(1,-1), Bob at B(1.2,1)."""
    from nlqm.hilbert import named_state
    model = SystemModel((weinberg_part(lam, h), weinberg_part(lam, h)))
    ms = (MeasurementEvent(Event(1.0, -1.0, "A"), 0, bloch_basis(0, *alice)),
          MeasurementEvent(Event(1.2, 1.0, "B"), 1, bloch_basis(1, *bob)))
    return Scenario(named_state("bell", (2, 2)), Event(0.0, 0.0, "C"), model, ms, dt)


def random_pair_scenario(seed: int, lam: float = 0.3, dt: float = 1e-3) -> Scenario:
    """Two qubits from a common preparation, measured at spacelike events.

    Random initial state, random local Hamiltonians and random Weinberg
    observable/response pairs; event order in the lab is random too.
    """
    rng = np.random.default_rng(seed)
    parts = []
    for _ in range(2):
        h = random_hermitian(2, rng, 0.7)
        obs = random_hermitian(2, rng)
        resp = random_hermitian(2, rng)
        obs /= np.linalg.norm(obs, 2)
        resp /= np.linalg.norm(resp, 2)
        parts.append(weinberg_part(lam, h, obs, resp))
    # inside the preparation's cone; |xb - xa| >= 0.6 > |tb - ta| keeps A, B spacelike
    ta, tb = rng.uniform(0.6, 1.1, size=2)
    xa = -ta * rng.uniform(0.5, 1.0)
    xb = tb * rng.uniform(0.5, 1.0)
    ms = (MeasurementEvent(Event(ta, xa, "A"), 0, random_basis(0, 2, rng)),
          MeasurementEvent(Event(tb, xb, "B"), 1, random_basis(1, 2, rng)))
    return Scenario(random_state((2, 2), rng), Event(0.0, 0.0, "C"), SystemModel(tuple(parts)),
                    ms, dt)


def chained_scenario(seed: int, n_events: int = 3, dt: float = 5e-3) -> Scenario:
    """One qubit measured repeatedly along a single timelike worldline."""
    rng = np.random.default_rng(seed)
    h = random_hermitian(2, rng, 0.7)
    obs, resp = random_hermitian(2, rng), random_hermitian(2, rng)
    part = weinberg_part(rng.uniform(0.2, 0.5), h, obs / np.linalg.norm(obs, 2),
                         resp / np.linalg.norm(resp, 2))
    t, x, ms = 0.0, 0.0, []
    for i in range(n_events):
        step = rng.uniform(0.3, 0.6)
        t += step
        x += rng.uniform(-0.8, 0.8) * step
        ms.append(MeasurementEvent(Event(t, x, f"M{i + 1}"), 0, random_basis(0, 2, rng)))
    return Scenario(random_state((2,), rng), Event(0.0, 0.0, "C"), SystemModel((part,)),
                    tuple(ms), dt)


@pytest.fixture(scope="session")
def bell():
    return load_scenario(bundled("bell_fig1"))


@pytest.fixture(scope="session")
def five_event():
    return load_scenario(bundled("five_event_fig5"))


def pytest_terminal_summary(terminalreporter):
    results = sys.modules.get("test_acceptance")
    if results is None or not results.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results.RESULTS):
        terminalreporter.write_line(results.RESULTS[n])
