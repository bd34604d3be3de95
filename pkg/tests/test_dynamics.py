import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import weinberg_part
from nlqm.dynamics import (
    AccuracyError,
    Kind,
    NonlinearModel,
    SystemModel,
    TrajectoryCache,
    boundary_propagator,
    eval_nonlinear_potential,
    factorized_propagator,
    linear_propagator,
    local_propagator,
    solve_nonlinear,
)
from nlqm.hilbert import (
    SIGMA_X,
    SIGMA_Y,
    SIGMA_Z,
    LinearOperator,
    StateVector,
    basis_state,
    random_hermitian,
    random_state,
)

PHI = np.array([math.cos(math.pi / 8), math.sin(math.pi / 8)], dtype=complex)
UP = np.array([1, 0], dtype=complex)
PLUS = np.array([1, 1], dtype=complex) / math.sqrt(2)

# DOP853 (rtol 1e-12) solution of the sigma_z/sigma_z Weinberg qubit with
# H_L = sigma_x, lam = 0.5, psi(0) = PHI, evaluated at t = 2
PSI2_ORACLE = np.array([-0.2143241025777545 - 0.31738602919036063j,
                        -0.494955395299126 - 0.7799682328103686j])

seeds = st.integers(0, 2**32 - 1)


def qubit(lam=0.5, h=SIGMA_X):
    return weinberg_part(lam, h)


# potentials ---------------------------------------------------------------

def test_zero_lambda_gives_zero_potential():
    v = eval_nonlinear_potential(qubit(0.0), StateVector((2,), PHI))
    assert np.array_equal(v.matrix, np.zeros((2, 2)))


def test_weinberg_potential_vanishes_on_plus():
    v = eval_nonlinear_potential(qubit(0.5), StateVector((2,), PLUS))
    assert np.allclose(v.matrix, 0, atol=1e-15)


def test_weinberg_potential_on_up():
    v = eval_nonlinear_potential(qubit(0.3), StateVector((2,), UP))
    assert np.allclose(v.matrix, 0.3 * SIGMA_Z, atol=1e-15)


def test_potential_rejects_unnormalized_input():
    with pytest.raises(ValueError):
        eval_nonlinear_potential(qubit(), StateVector((2,), 1.1 * UP))


def test_onsite_cubic_potential():
    model = NonlinearModel(LinearOperator((3,), np.zeros((3, 3))), Kind.ONSITE_CUBIC, 0.7,
                           {"weights": [1.0, 2.0, 0.5]})
    psi = np.array([0.6, 0.0, 0.8], dtype=complex)
    v = eval_nonlinear_potential(model, StateVector((3,), psi)).matrix
    assert np.allclose(v, np.diag(0.7 * np.array([1.0, 2.0, 0.5]) * [0.36, 0, 0.64]))


def test_schroedinger_newton_potential():
    x = np.array([-1.0, 0.0, 1.5])
    model = NonlinearModel(LinearOperator((3,), np.zeros((3, 3))), Kind.SCHROEDINGER_NEWTON, 0.4,
                           {"positions": x, "softening": 0.5, "mass": 2.0})
    psi = np.array([0.6, 0.0, 0.8], dtype=complex)
    pops = np.abs(psi) ** 2
    expected = [-0.4 * 4.0 * sum(pops[j] / (abs(x[i] - x[j]) + 0.5) for j in range(3))
                for i in range(3)]
    v = eval_nonlinear_potential(model, StateVector((3,), psi)).matrix
    assert np.allclose(v, np.diag(expected), atol=1e-14)


@given(seeds, st.sampled_from(list(Kind)))
def test_potential_is_hermitian(seed, kind):
    rng = np.random.default_rng(seed)
    params = {}
    if kind is Kind.WEINBERG:
        params = {"observable": random_hermitian(3, rng), "response": random_hermitian(3, rng)}
    model = NonlinearModel(LinearOperator((3,), random_hermitian(3, rng)), kind,
                           rng.uniform(0, 2), params)
    v = eval_nonlinear_potential(model, random_state((3,), rng)).matrix
    assert np.max(np.abs(v - v.conj().T)) < 1e-12


def test_model_validation():
    with pytest.raises(ValueError):
        NonlinearModel(LinearOperator((2,), SIGMA_X), "weinberg", -0.1,
                       {"observable": SIGMA_Z, "response": SIGMA_Z})
    with pytest.raises(ValueError):
        NonlinearModel(LinearOperator((2,), SIGMA_X), "weinberg", 0.1, {"observable": SIGMA_Z})
    with pytest.raises(ValueError):
        NonlinearModel(LinearOperator((2,), SIGMA_X), "weinberg", 0.1,
                       {"observable": SIGMA_Z, "response": [[0, 1], [0, 0]]})
    with pytest.raises(ValueError):
        NonlinearModel(LinearOperator((2,), np.array([[0, 1], [0, 0]])))
    with pytest.raises(ValueError):
        NonlinearModel(LinearOperator((2,), SIGMA_X), "cubic")


# non-linear solve ---------------------------------------------------------

def test_linear_limit_matches_exponential():
    traj = solve_nonlinear(qubit(0.0), PHI, 0.0, 0.0, 1.0, 1e-3)
    for t, psi in zip(traj.times[::100], traj.amps[::100]):
        assert np.allclose(psi, linear_propagator(SIGMA_X, t) @ PHI, atol=1e-8)


def test_eigenstate_is_pure_phase():
    lam = 0.5
    traj = solve_nonlinear(qubit(lam, np.zeros((2, 2))), UP, 0.0, 0.0, 1.0, 1e-3)
    pops = np.abs(traj.amps) ** 2
    assert np.max(np.abs(pops - [1, 0])) < 1e-10
    assert traj.amps[-1][0] == pytest.approx(np.exp(-1j * lam), abs=1e-10)


def test_constant_expectation_closed_form():
    # with H_L = 0, <sigma_z> is conserved, so the flow is a fixed rotation
    lam, c = 0.5, math.cos(math.pi / 4)
    traj = solve_nonlinear(qubit(lam, np.zeros((2, 2))), PHI, 0.0, 0.0, 2.0, 1e-3)
    exact = np.exp(-1j * lam * c * 2.0 * np.array([1, -1])) * PHI
    assert np.allclose(traj.amps[-1], exact, atol=1e-12)


def test_solution_matches_dop853_oracle():
    traj = solve_nonlinear(qubit(), PHI, 0.0, 0.0, 2.0, 1e-3)
    assert np.max(np.abs(traj.amps[-1] - PSI2_ORACLE)) < 1e-7


def test_backward_solve_returns_to_start():
    fwd = solve_nonlinear(qubit(), PHI, 0.0, 0.0, 2.0, 1e-3)
    back = solve_nonlinear(qubit(), fwd.amps[-1], 2.0, 0.0, 2.0, 1e-3)
    assert np.max(np.abs(back.amps[0] - PHI)) < 1e-9


def test_trajectory_invariants():
    traj = solve_nonlinear(qubit(), PHI, 0.7, 0.0, 2.0, 1e-3)
    assert np.all(np.diff(traj.times) > 0)
    assert np.max(np.abs(traj.amps[traj.index_of(0.7)] - PHI)) < 1e-12
    assert np.max(np.abs(np.linalg.norm(traj.amps, axis=1) - 1)) < 1e-9
    with pytest.raises(KeyError):
        traj.index_of(0.70005)


def test_solve_arguments_are_checked():
    with pytest.raises(ValueError):
        solve_nonlinear(qubit(), PHI, 3.0, 0.0, 2.0)
    with pytest.raises(ValueError):
        solve_nonlinear(qubit(), PHI, 0.0, 0.0, 2.0, dt=0.0)
    with pytest.raises(ValueError):
        solve_nonlinear(qubit(), 2 * PHI, 0.0, 0.0, 2.0)


def test_step_budget_raises_accuracy_error():
    with pytest.raises(AccuracyError):
        solve_nonlinear(qubit(), PHI, 0.0, 0.0, 2.0, 1e-3, max_steps=100)


def test_norm_drift_raises_accuracy_error():
    stiff = weinberg_part(200.0, SIGMA_X)
    with pytest.raises(AccuracyError):
        solve_nonlinear(stiff, PHI, 0.0, 0.0, 2.0, 0.05)


def test_determinism_is_bitwise():
    a = boundary_propagator(qubit(), PHI, 0.3, 0.0, 1.0, 1e-3).matrix.matrix
    b = boundary_propagator(qubit(), PHI, 0.3, 0.0, 1.0, 1e-3).matrix.matrix
    assert a.tobytes() == b.tobytes()


def test_linear_limit_is_first_order_in_lambda():
    base = solve_nonlinear(qubit(0.0), PHI, 0.0, 0.0, 1.0, 1e-3).amps
    devs = [np.max(np.abs(solve_nonlinear(qubit(lam), PHI, 0.0, 0.0, 1.0, 1e-3).amps - base))
            for lam in (0.1, 0.05, 0.025)]
    for big, small in zip(devs, devs[1:]):
        assert big / small == pytest.approx(2.0, rel=0.25)


# propagators --------------------------------------------------------------

def test_propagator_at_boundary_time_is_identity():
    U = boundary_propagator(qubit(), PHI, 0.4, 0.4, 0.4).matrix.matrix
    assert np.allclose(U, np.eye(2), atol=1e-12)


def test_zero_lambda_propagator_is_linear():
    U = boundary_propagator(qubit(0.0), PHI, 0.0, 0.2, 1.3).matrix.matrix
    assert np.allclose(U, linear_propagator(SIGMA_X, 1.1), atol=1e-9)


def test_propagator_matches_dop853_oracle():
    ham = oracles.weinberg_ham(SIGMA_X, SIGMA_Z, SIGMA_Z, 0.5)
    ref = oracles.boundary_propagator(ham, PHI, 0.5, 0.0, 1.5)
    U = boundary_propagator(qubit(), PHI, 0.5, 0.0, 1.5).matrix.matrix
    assert np.max(np.abs(U - ref)) < 1e-9


def test_self_consistency_and_unitarity():
    traj = solve_nonlinear(qubit(), PHI, 0.0, 0.0, 2.0, 1e-3)
    prop = boundary_propagator(qubit(), PHI, 0.0, 0.0, 2.0, trajectory=traj)
    assert np.linalg.norm(prop.matrix.matrix @ PHI - traj.amps[-1]) < 1e-7
    assert prop.unitarity_error() < 1e-9


def test_composition():
    m = qubit()
    U = lambda a, b: boundary_propagator(m, PHI, 0.5, a, b).matrix.matrix
    assert np.allclose(U(0.8, 1.6) @ U(0.1, 0.8), U(0.1, 1.6), atol=1e-8)
    assert np.allclose(U(1.6, 0.1) @ U(0.1, 1.6), np.eye(2), atol=1e-8)


def test_self_consistency_is_fourth_order():
    m = qubit()

    def error(dt):
        traj = solve_nonlinear(m, PHI, 0.0, 0.0, 2.0, dt)
        U = boundary_propagator(m, PHI, 0.0, 0.0, 2.0, dt, trajectory=traj).matrix.matrix
        return np.linalg.norm(U @ PHI - traj.amps[-1])

    assert error(0.04) / error(0.02) >= 8.0


def test_coverage_gap_is_an_error():
    traj = solve_nonlinear(qubit(), PHI, 0.0, 0.0, 1.0)
    with pytest.raises(ValueError, match="coverage"):
        boundary_propagator(qubit(), PHI, 0.0, 0.0, 1.5, trajectory=traj)


@settings(max_examples=15)
@given(seeds)
def test_random_propagators_are_unitary(seed):
    rng = np.random.default_rng(seed)
    part = weinberg_part(rng.uniform(0, 1), random_hermitian(2, rng), random_hermitian(2, rng),
                         random_hermitian(2, rng))
    phi = random_state((2,), rng).amps
    T, a, b = rng.uniform(0, 1, size=3)
    assert boundary_propagator(part, phi, T, a, b, 5e-3).unitarity_error() < 1e-9


def test_trajectory_cache_reuses_and_extends():
    cache = TrajectoryCache(qubit(), 1e-3)
    t1 = cache.get(PHI, 0.5, 0.5, 1.0)
    assert cache.get(PHI, 0.5, 0.6, 0.9) is t1
    t2 = cache.get(PHI, 0.5, 0.0, 1.0)
    assert t2.covers(0.0, 1.0)
    # the grid is anchored at T, so shared points agree bit for bit
    i, j = t1.index_of(0.8), t2.index_of(0.8)
    assert t1.amps[i].tobytes() == t2.amps[j].tobytes()


# factorized ---------------------------------------------------------------

def test_factorized_trivial_is_identity():
    zero = np.zeros((2, 2))
    system = SystemModel((weinberg_part(0.0, zero), weinberg_part(0.0, zero)))
    up2 = basis_state((2, 2), (0, 0)).amps
    U = factorized_propagator(system, [(up2, 0.0), (up2, 0.0)], 0.0, 1.0).matrix.matrix
    assert np.allclose(U, np.eye(4), atol=1e-14)


def test_factorized_phase_times_linear():
    lam, hb = 0.4, 0.3 * SIGMA_Y
    system = SystemModel((weinberg_part(lam, np.zeros((2, 2))), weinberg_part(0.0, hb)))
    up2 = basis_state((2, 2), (0, 0)).amps
    U = factorized_propagator(system, [(up2, 0.0), (up2, 0.0)], 0.0, 1.0).matrix.matrix
    expected = np.kron(np.diag(np.exp([-1j * lam, 1j * lam])), linear_propagator(hb, 1.0))
    assert np.allclose(U, expected, atol=1e-10)


def test_factor_embeddings_commute():
    system = SystemModel((qubit(), weinberg_part(0.3, SIGMA_Y)))
    psi = random_state((2, 2), np.random.default_rng(4)).amps
    traj = solve_nonlinear(system, psi, 0.0, 0.0, 1.0)
    A = np.kron(local_propagator(system, 0, traj, 0.0, 1.0), np.eye(2))
    B = np.kron(np.eye(2), local_propagator(system, 1, traj, 0.0, 1.0))
    assert np.array_equal(A @ B, B @ A)


def test_factorized_rejects_cross_coupling():
    coupled = SystemModel((qubit(), qubit()),
                          interaction=LinearOperator((2, 2), np.kron(SIGMA_Z, SIGMA_Z)))
    psi = basis_state((2, 2), (0, 0)).amps
    with pytest.raises(ValueError, match="cross-coupling"):
        factorized_propagator(coupled, [(psi, 0.0), (psi, 0.0)], 0.0, 1.0)


def test_shared_boundary_factorization_matches_joint_propagator():
    system = SystemModel((qubit(), weinberg_part(0.3, SIGMA_Y)))
    psi = random_state((2, 2), np.random.default_rng(9)).amps
    joint = boundary_propagator(system, psi, 0.2, 0.0, 1.0).matrix.matrix
    fact = factorized_propagator(system, [(psi, 0.2), (psi, 0.2)], 0.0, 1.0).matrix.matrix
    assert np.allclose(joint, fact, atol=1e-12)


def test_system_rejects_multi_factor_part():
    bad = NonlinearModel(LinearOperator((2, 2), np.zeros((4, 4))))
    with pytest.raises(ValueError):
        SystemModel((bad,))


def test_dense_and_local_paths_agree(monkeypatch):
    import nlqm.dynamics as dyn

    def build():
        onsite = NonlinearModel(LinearOperator((3,), np.diag([0.0, 0.3, -0.2])),
                                Kind.ONSITE_CUBIC, 0.7, {"weights": [1.0, 2.0, 0.5]})
        return SystemModel((qubit(0.4), onsite))

    phi = random_state((2, 3), np.random.default_rng(3)).amps
    dense = boundary_propagator(build(), phi, 0.0, 0.0, 0.8, 1e-2).matrix.matrix
    monkeypatch.setattr(dyn, "DENSE_MAX_DIM", 0)
    local_model = build()
    assert not local_model._dense
    local = boundary_propagator(local_model, phi, 0.0, 0.0, 0.8, 1e-2).matrix.matrix
    assert np.allclose(dense, local, atol=1e-12)
