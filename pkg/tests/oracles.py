"""Independent reference integrators (scipy DOP853) used to freeze test values.

Nothing here touches the package's RK4 code: the non-linear solution and the
drive-linearized propagator are both integrated adaptively from scratch.
"""
from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

RTOL, ATOL = 1e-12, 1e-14


def _c2r(z):
    return np.concatenate([z.real, z.imag])


def _r2c(y):
    n = len(y) // 2
    return y[:n] + 1j * y[n:]


def nonlinear_solution(ham, phi, T, t_eval_span):
    """Dense solution of i psi' = ham(psi) psi through psi(T) = phi.

    ``ham`` maps a state vector to its Hermitian generator.  Returns a callable
    t -> psi(t) valid on ``t_eval_span`` (which must contain T).
    """
    lo, hi = t_eval_span
    rhs = lambda t, y: _c2r(-1j * (ham(_r2c(y)) @ _r2c(y)))
    pieces = []
    for end in (lo, hi):
        if end != T:
            sol = solve_ivp(rhs, (T, end), _c2r(np.asarray(phi, complex)), method="DOP853",
                            rtol=RTOL, atol=ATOL, dense_output=True)
            pieces.append((min(T, end), max(T, end), sol.sol))

    def psi(t):
        if t == T:
            return np.asarray(phi, complex)
        for a, b, f in pieces:
            if a <= t <= b:
                return _r2c(f(t))
        raise ValueError(f"t={t} outside [{lo}, {hi}]")
    return psi


def linear_propagator(generator, t0, t1):
    """U(t1, t0) of i U' = G(t) U, integrated column by column."""
    D = generator(t0).shape[0]
    cols = []
    for j in range(D):
        e = np.zeros(D, complex)
        e[j] = 1.0
        rhs = lambda t, y: _c2r(-1j * (generator(t) @ _r2c(y)))
        sol = solve_ivp(rhs, (t0, t1), _c2r(e), method="DOP853", rtol=RTOL, atol=ATOL)
        cols.append(_r2c(sol.y[:, -1]))
    return np.array(cols).T


def weinberg_ham(h_lin, obs, resp, lam):
    return lambda psi: h_lin + lam * np.vdot(psi, obs @ psi).real * resp


def boundary_propagator(ham, phi, T, t0, t1):
    """Propagator from t0 to t1 driven by the solution through (phi, T)."""
    lo, hi = min(T, t0, t1), max(T, t0, t1)
    psi = nonlinear_solution(ham, phi, T, (lo, hi))
    return linear_propagator(lambda t: ham(psi(t)), t0, t1)
