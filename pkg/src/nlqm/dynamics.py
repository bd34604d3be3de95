"""Non-linear Schrödinger integration and boundary-dependent propagators.

A boundary ``(phi, T)`` fixes one solution ``psi(t)`` of

    i d/dt psi = (H_L + V_NL(psi)) psi,        psi(T) = phi,

and that solution, used as a classical drive, turns the equation into a
linear one, ``i d/dt chi = (H_L + V_NL(psi(t))) chi``.  The propagator of the
linear equation is what measurement prescriptions compose.  hbar = 1.

Both equations are integrated with classical fixed-step RK4.  The drive is
needed between grid points by the linear integrator; it is reconstructed
with cubic Hermite interpolation (value and derivative are both known at
grid points), which keeps the propagator fourth-order accurate.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .hilbert import (
    LinearOperator,
    StateVector,
    apply_local,
    embed_matrix,
    marginal_populations,
)

log = logging.getLogger(__name__)

DEFAULT_DT = 1e-3
MAX_STEPS = 10_000_000
NORM_DRIFT_TOL = 1e-6
INPUT_NORM_TOL = 1e-6
HERMITIAN_TOL = 1e-12
# joint dimension up to which generators are built as dense matrices
DENSE_MAX_DIM = 256


class AccuracyError(RuntimeError):
    """Integration left its accuracy envelope (norm drift, step budget)."""


class Kind(str, enum.Enum):
    NONE = "none"
    WEINBERG = "weinberg"
    ONSITE_CUBIC = "onsite_cubic"
    SCHROEDINGER_NEWTON = "schroedinger_newton_1d"


def _hermitian(mat, what: str) -> np.ndarray:
    mat = np.array(mat, dtype=complex)
    mat.setflags(write=False)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{what} must be a square matrix")
    if np.max(np.abs(mat - mat.conj().T)) >= HERMITIAN_TOL:
        raise ValueError(f"{what} is not Hermitian")
    return mat


@dataclass(frozen=True, eq=False)
class NonlinearModel:
    """Linear Hamiltonian plus one state-dependent potential.

    ``params`` by kind:

    * ``weinberg``: ``observable`` O and ``response`` M; V = lam <O> M.
    * ``onsite_cubic``: ``weights`` w; V = lam diag(w_i p_i), p_i the
      computational-basis populations.
    * ``schroedinger_newton_1d``: ``positions`` x_j of the basis states,
      ``softening`` eps (default 0.1), ``mass`` m (default 1);
      V = -lam m^2 diag(sum_j p_j / (|x_i - x_j| + eps)).

    Used as one factor of a :class:`SystemModel` the populations and
    expectation values are those of that factor in the joint state.
    """

    h_linear: LinearOperator
    kind: Kind = Kind.NONE
    lam: float = 0.0
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not self.h_linear.is_hermitian(HERMITIAN_TOL):
            raise ValueError("h_linear is not Hermitian")
        if not (self.lam >= 0.0 and math.isfinite(self.lam)):
            raise ValueError(f"lam must be finite and >= 0, got {self.lam}")
        d = self.h_linear.matrix.shape[0]
        p = dict(self.params)
        if kind is Kind.WEINBERG:
            for key in ("observable", "response"):
                if key not in p:
                    raise ValueError(f"weinberg model needs {key!r}")
                p[key] = _hermitian(p[key], key)
                if p[key].shape != (d, d):
                    raise ValueError(f"{key} has shape {p[key].shape}, expected {(d, d)}")
        elif kind is Kind.ONSITE_CUBIC:
            w = np.asarray(p.get("weights", np.ones(d)), dtype=float)
            if w.shape != (d,):
                raise ValueError(f"weights must have length {d}")
            p["weights"] = w
        elif kind is Kind.SCHROEDINGER_NEWTON:
            x = np.asarray(p.get("positions", np.arange(d)), dtype=float)
            if x.shape != (d,):
                raise ValueError(f"positions must have length {d}")
            eps = float(p.get("softening", 0.1))
            if eps <= 0:
                raise ValueError("softening must be positive")
            p["positions"], p["softening"] = x, eps
            p["mass"] = float(p.get("mass", 1.0))
            p["kernel"] = 1.0 / (np.abs(x[:, None] - x[None, :]) + eps)
        object.__setattr__(self, "params", p)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.h_linear.dims

    @property
    def dim(self) -> int:
        return self.h_linear.matrix.shape[0]

    def with_lambda(self, lam: float) -> "NonlinearModel":
        params = {k: v for k, v in self.params.items() if k != "kernel"}
        return NonlinearModel(self.h_linear, self.kind, lam, params)

    @property
    def active(self) -> bool:
        return self.kind is not Kind.NONE and self.lam != 0.0

    def feature(self, psi: np.ndarray, dims: Sequence[int] | None = None,
                target: int | None = None):
        """The state functional the potential depends on: <O> or the populations."""
        if self.kind is Kind.WEINBERG:
            obs = self.params["observable"]
            if target is None:
                return np.vdot(psi, obs @ psi).real
            return np.vdot(psi, apply_local(obs, target, dims, psi)).real
        return np.abs(psi) ** 2 if target is None else marginal_populations(psi, target, dims)

    def potential_diagonal(self, pops: np.ndarray) -> np.ndarray:
        """Diagonal of V for the population-driven kinds."""
        p = self.params
        if self.kind is Kind.ONSITE_CUBIC:
            return self.lam * p["weights"] * pops
        return -self.lam * p["mass"] ** 2 * (p["kernel"] @ pops)

    def potential_from(self, feat) -> np.ndarray:
        if not self.active:
            return np.zeros((self.dim, self.dim), dtype=complex)
        if self.kind is Kind.WEINBERG:
            return (self.lam * feat) * self.params["response"]
        return np.diag(self.potential_diagonal(feat)).astype(complex)

    def potential_batch(self, feats: np.ndarray) -> np.ndarray:
        """Stack of V matrices, one per row of ``feats`` (scalars or population rows)."""
        n, d = len(feats), self.dim
        if not self.active:
            return np.zeros((n, d, d), dtype=complex)
        if self.kind is Kind.WEINBERG:
            return (self.lam * feats)[:, None, None] * self.params["response"]
        p = self.params
        if self.kind is Kind.ONSITE_CUBIC:
            vals = self.lam * feats * p["weights"]
        else:
            vals = -self.lam * p["mass"] ** 2 * (feats @ p["kernel"].T)
        out = np.zeros((n, d, d), dtype=complex)
        out[:, np.arange(d), np.arange(d)] = vals
        return out

    def hamiltonians(self, drives: np.ndarray) -> np.ndarray:
        """H for each row of ``drives`` (shape (n, dim))."""
        if self.kind is Kind.WEINBERG:
            obs = self.params["observable"]
            feats = np.einsum("ni,ni->n", drives.conj(), drives @ obs.T).real
        else:
            feats = np.abs(drives) ** 2
        return self.h_linear.matrix + self.potential_batch(feats)

    def potential_matrix(self, psi: np.ndarray, dims: Sequence[int] | None = None,
                         target: int | None = None) -> np.ndarray:
        """V_NL evaluated on ``psi``.

        With ``target`` set, ``psi`` is a joint state over ``dims`` and the
        returned matrix acts on that factor only.
        """
        if not self.active:
            return np.zeros((self.dim, self.dim), dtype=complex)
        return self.potential_from(self.feature(psi, dims, target))

    def hamiltonian(self, drive: np.ndarray) -> np.ndarray:
        return self.h_linear.matrix + self.potential_matrix(drive)

    def apply(self, drive: np.ndarray, psi: np.ndarray) -> np.ndarray:
        return self.hamiltonian(drive) @ psi


@dataclass(frozen=True, eq=False)
class SystemModel:
    """One :class:`NonlinearModel` per tensor factor plus optional couplings.

    ``interaction`` is a linear coupling on the joint space;
    ``nl_interaction`` is a non-linear term on the joint space and always
    shares one boundary across the factors it touches.
    """

    parts: tuple[NonlinearModel, ...]
    interaction: LinearOperator | None = None
    nl_interaction: NonlinearModel | None = None

    def __post_init__(self):
        parts = tuple(self.parts)
        if not parts:
            raise ValueError("system needs at least one part")
        for k, part in enumerate(parts):
            if len(part.dims) != 1:
                raise ValueError(f"part {k} must act on a single factor, got dims {part.dims}")
        object.__setattr__(self, "parts", parts)
        dims = self.dims
        for name in ("interaction", "nl_interaction"):
            term = getattr(self, name)
            if term is not None and tuple(term.dims) != dims:
                raise ValueError(f"{name} dims {term.dims} do not match system dims {dims}")
        if self.interaction is not None and not self.interaction.is_hermitian(HERMITIAN_TOL):
            raise ValueError("interaction is not Hermitian")
        # digit k of every joint basis index, for marginals and diagonal potentials
        digits = np.indices(dims).reshape(len(dims), -1)
        object.__setattr__(self, "_digits", digits)
        object.__setattr__(self, "_onehot", [np.eye(d)[digits[k]] for k, d in enumerate(dims)])
        object.__setattr__(self, "_dense", int(np.prod(dims)) <= DENSE_MAX_DIM)
        if self._dense:
            obs, resp = [], []
            for k, part in enumerate(parts):
                weinberg = part.active and part.kind is Kind.WEINBERG
                obs.append(embed_matrix(part.params["observable"], k, dims) if weinberg else None)
                resp.append(embed_matrix(part.params["response"], k, dims) if weinberg else None)
            object.__setattr__(self, "_obs", obs)
            object.__setattr__(self, "_resp", resp)
            # all Weinberg terms at once: features = conj(psi) . (O_stack psi),
            # potential = features @ (lam M)_stack
            wk = [k for k, o in enumerate(obs) if o is not None]
            stack = None
            if wk:
                D = int(np.prod(dims))
                stack = (np.concatenate([obs[k] for k in wk]).reshape(len(wk), D, D),
                         np.array([parts[k].lam * resp[k].ravel() for k in wk]))
            object.__setattr__(self, "_wstack", stack)
            object.__setattr__(self, "_h_lin", self._linear_full())

    @classmethod
    def product(cls, *parts: NonlinearModel) -> "SystemModel":
        return cls(tuple(parts))

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(p.dim for p in self.parts)

    @property
    def factorizable(self) -> bool:
        return self.interaction is None and self.nl_interaction is None

    @property
    def lam(self) -> float:
        lams = [p.lam for p in self.parts]
        if self.nl_interaction is not None:
            lams.append(self.nl_interaction.lam)
        return max(lams)

    def with_lambda(self, lam: float) -> "SystemModel":
        nl = None if self.nl_interaction is None else self.nl_interaction.with_lambda(lam)
        return SystemModel(tuple(p.with_lambda(lam) for p in self.parts), self.interaction, nl)

    def linear_hamiltonian(self) -> np.ndarray:
        return self._h_lin.copy() if self._dense else self._linear_full()

    def _linear_full(self) -> np.ndarray:
        dims = self.dims
        h = sum(embed_matrix(p.h_linear.matrix, k, dims) for k, p in enumerate(self.parts))
        if self.interaction is not None:
            h = h + self.interaction.matrix
        return np.asarray(h, dtype=complex)

    def _feature(self, k: int, psi: np.ndarray):
        part = self.parts[k]
        if part.kind is Kind.WEINBERG:
            if self._dense:
                return np.vdot(psi, self._obs[k] @ psi).real
            return part.feature(psi, self.dims, k)
        return np.bincount(self._digits[k], weights=np.abs(psi) ** 2, minlength=part.dim)

    def _features(self, k: int, drives: np.ndarray) -> np.ndarray:
        part = self.parts[k]
        if part.kind is Kind.WEINBERG:
            if self._dense:
                return np.einsum("ni,ni->n", drives.conj(), drives @ self._obs[k].T).real
            return np.array([part.feature(dr, self.dims, k) for dr in drives])
        return (np.abs(drives) ** 2) @ self._onehot[k]

    def local_generators(self, k: int, drives: np.ndarray) -> np.ndarray:
        """Factor k's generator for each row of ``drives`` (joint states)."""
        part = self.parts[k]
        if not part.active:
            return np.broadcast_to(part.h_linear.matrix, (len(drives), part.dim, part.dim))
        return part.h_linear.matrix + part.potential_batch(self._features(k, drives))

    def mixed_hamiltonians(self, drives: Sequence[np.ndarray],
                           int_drive: np.ndarray | None = None) -> np.ndarray:
        """Batched :meth:`mixed_hamiltonian`; ``drives[k]`` has shape (n, D)."""
        n = len(drives[0])
        if not self._dense:
            return np.array([self.mixed_hamiltonian([dr[j] for dr in drives],
                                                    None if int_drive is None else int_drive[j])
                             for j in range(n)])
        h = np.repeat(self._h_lin[None], n, axis=0)
        D = h.shape[1]
        for k, dr in enumerate(drives):
            part = self.parts[k]
            if not part.active:
                continue
            feats = self._features(k, dr)
            if part.kind is Kind.WEINBERG:
                h += (part.lam * feats)[:, None, None] * self._resp[k]
            else:
                diag = np.einsum("njj->nj", part.potential_batch(feats))
                h[:, np.arange(D), np.arange(D)] += diag[:, self._digits[k]]
        if self.nl_interaction is not None:
            h = h + self.nl_interaction.hamiltonians(int_drive) - self.nl_interaction.h_linear.matrix
        return h

    def local_generator(self, k: int, drive: np.ndarray) -> np.ndarray:
        part = self.parts[k]
        if not part.active:
            return np.array(part.h_linear.matrix)
        return part.h_linear.matrix + part.potential_from(self._feature(k, drive))

    def mixed_hamiltonian(self, drives: Sequence[np.ndarray], int_drive: np.ndarray | None = None
                          ) -> np.ndarray:
        """Joint generator where factor k's potential is evaluated on ``drives[k]``."""
        if not self._dense:
            dims = self.dims
            h = self._linear_full()
            for k, dr in enumerate(drives):
                if self.parts[k].active:
                    h = h + embed_matrix(self.parts[k].potential_from(self._feature(k, dr)), k, dims)
        else:
            h = self._h_lin.copy()
            diag = None
            for k, dr in enumerate(drives):
                part = self.parts[k]
                if not part.active:
                    continue
                feat = self._feature(k, dr)
                if part.kind is Kind.WEINBERG:
                    h += (part.lam * feat) * self._resp[k]
                else:
                    term = part.potential_diagonal(feat)[self._digits[k]]
                    diag = term if diag is None else diag + term
            if diag is not None:
                h[np.diag_indices_from(h)] += diag
        if self.nl_interaction is not None:
            h = h + self.nl_interaction.potential_matrix(int_drive)
        return h

    def hamiltonian(self, drive: np.ndarray) -> np.ndarray:
        return self.mixed_hamiltonian([drive] * len(self.parts), drive)

    def apply(self, drive: np.ndarray, psi: np.ndarray) -> np.ndarray:
        if self._dense:
            h = self._h_lin
            if self._wstack is not None:
                obs, lam_resp = self._wstack
                feats = ((obs @ drive) @ drive.conj()).real
                h = h + (feats @ lam_resp).reshape(h.shape)
            out = h @ psi
            for k, part in enumerate(self.parts):
                if part.active and part.kind is not Kind.WEINBERG:
                    feat = self._feature(k, drive)
                    out += part.potential_diagonal(feat)[self._digits[k]] * psi
            if self.nl_interaction is not None:
                out += self.nl_interaction.potential_matrix(drive) @ psi
            return out
        dims = self.dims
        out = np.zeros_like(psi)
        for k in range(len(self.parts)):
            out += apply_local(self.local_generator(k, drive), k, dims, psi)
        if self.interaction is not None:
            out += self.interaction.matrix @ psi
        if self.nl_interaction is not None:
            out += self.nl_interaction.apply(drive, psi)
        return out


Model = NonlinearModel | SystemModel


def _as_amps(state, dims) -> np.ndarray:
    if isinstance(state, StateVector):
        if state.dims != tuple(dims):
            raise ValueError(f"state dims {state.dims} do not match model dims {tuple(dims)}")
        return np.asarray(state.amps)
    amps = np.asarray(state, dtype=complex).ravel()
    if amps.size != int(np.prod(dims)):
        raise ValueError(f"state of size {amps.size} does not match model dims {tuple(dims)}")
    return amps


def eval_nonlinear_potential(model: NonlinearModel, psi: StateVector) -> LinearOperator:
    amps = _as_amps(psi, model.dims)
    if abs(np.linalg.norm(amps) - 1.0) > INPUT_NORM_TOL:
        raise ValueError(f"state is not normalized (norm {np.linalg.norm(amps):.3g})")
    return LinearOperator(model.dims, model.potential_matrix(amps))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Solution of the non-linear equation on a time grid, with its derivative."""

    times: np.ndarray
    amps: np.ndarray
    derivs: np.ndarray
    dims: tuple[int, ...]
    boundary_state: np.ndarray
    boundary_time: float

    @property
    def states(self) -> tuple[StateVector, ...]:
        return tuple(StateVector(self.dims, a) for a in self.amps)

    @property
    def boundary(self) -> tuple[StateVector, float]:
        return StateVector(self.dims, self.boundary_state), self.boundary_time

    def index_of(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-12 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not on the trajectory grid")
        return i

    def covers(self, lo: float, hi: float) -> bool:
        slack = 1e-12 * max(1.0, abs(lo), abs(hi))
        return self.times[0] <= lo + slack and self.times[-1] >= hi - slack

    def at(self, t: float) -> np.ndarray:
        """Drive at arbitrary t by cubic Hermite interpolation."""
        times = self.times
        if not self.covers(t, t):
            raise ValueError(f"time {t} outside trajectory [{times[0]}, {times[-1]}]")
        i = int(np.searchsorted(times, t, side="right")) - 1
        i = min(max(i, 0), len(times) - 2)
        t0, t1 = times[i], times[i + 1]
        h = t1 - t0
        s = (t - t0) / h
        if s <= 0.0:
            return self.amps[i]
        if s >= 1.0:
            return self.amps[i + 1]
        s2, s3 = s * s, s * s * s
        return ((2 * s3 - 3 * s2 + 1) * self.amps[i] + (s3 - 2 * s2 + s) * h * self.derivs[i]
                + (-2 * s3 + 3 * s2) * self.amps[i + 1] + (s3 - s2) * h * self.derivs[i + 1])


    def at_many(self, ts: np.ndarray) -> np.ndarray:
        """Vectorized :meth:`at`; rows are the drive at each requested time."""
        ts = np.asarray(ts, dtype=float)
        times = self.times
        if len(ts) and not self.covers(float(ts.min()), float(ts.max())):
            raise ValueError(f"times [{ts.min()}, {ts.max()}] outside trajectory "
                             f"[{times[0]}, {times[-1]}]")
        i = np.clip(np.searchsorted(times, ts, side="right") - 1, 0, len(times) - 2)
        h = times[i + 1] - times[i]
        sv = np.clip((ts - times[i]) / h, 0.0, 1.0)[:, None]
        s2, s3 = sv * sv, sv * sv * sv
        hh = h[:, None]
        return ((2 * s3 - 3 * s2 + 1) * self.amps[i] + (s3 - 2 * s2 + sv) * hh * self.derivs[i]
                + (-2 * s3 + 3 * s2) * self.amps[i + 1] + (s3 - s2) * hh * self.derivs[i + 1])


def _step_grid(start: float, stop: float, dt: float) -> np.ndarray:
    """start, start ± dt, ... ending exactly on stop (last step may be short)."""
    span = stop - start
    n_full = int(math.floor(abs(span) / dt * (1 + 1e-12)))
    grid = start + np.sign(span) * dt * np.arange(n_full + 1)
    if abs(grid[-1] - stop) > 1e-12 * max(1.0, abs(stop)):
        grid = np.append(grid, stop)
    else:
        grid[-1] = stop
    return grid


def _rk4_nonlinear(model: Model, psi0: np.ndarray, grid: np.ndarray):
    def f(psi):
        return -1j * model.apply(psi, psi)

    amps = np.empty((len(grid), psi0.size), dtype=complex)
    derivs = np.empty_like(amps)
    psi = psi0.copy()
    amps[0] = psi
    k1 = f(psi)
    derivs[0] = k1
    for n in range(len(grid) - 1):
        h = grid[n + 1] - grid[n]
        k2 = f(psi + 0.5 * h * k1)
        k3 = f(psi + 0.5 * h * k2)
        k4 = f(psi + h * k3)
        psi = psi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        amps[n + 1] = psi
        k1 = f(psi)
        derivs[n + 1] = k1
    return amps, derivs


def solve_nonlinear(model: Model, boundary_state, T: float, t_start: float, t_end: float,
                    dt: float = DEFAULT_DT, max_steps: int = MAX_STEPS,
                    drift_tol: float = NORM_DRIFT_TOL) -> Trajectory:
    """Integrate the non-linear equation from ``psi(T) = boundary_state``.

    Runs backward from T to ``t_start`` and forward to ``t_end``.  The grid is
    anchored at T with spacing ``dt`` (the outermost steps may be shorter),
    so extending the range never changes already-computed points.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t_start <= T <= t_end:
        raise ValueError(f"need t_start <= T <= t_end, got {t_start}, {T}, {t_end}")
    dims = model.dims
    phi = _as_amps(boundary_state, dims).astype(complex)
    norm0 = np.linalg.norm(phi)
    if abs(norm0 - 1.0) > INPUT_NORM_TOL:
        raise ValueError(f"boundary state is not normalized (norm {norm0:.6g})")
    n_steps = math.ceil((T - t_start) / dt) + math.ceil((t_end - T) / dt)
    if n_steps > max_steps:
        raise AccuracyError(f"{n_steps} steps exceed the budget of {max_steps}")

    back = _step_grid(T, t_start, dt)
    fwd = _step_grid(T, t_end, dt)
    # a blow-up is reported by the drift check below, not by numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        amps_b, der_b = _rk4_nonlinear(model, phi, back)
        amps_f, der_f = _rk4_nonlinear(model, phi, fwd)
    times = np.concatenate([back[:0:-1], fwd])
    amps = np.concatenate([amps_b[:0:-1], amps_f])
    derivs = np.concatenate([der_b[:0:-1], der_f])

    drift = float(np.max(np.abs(np.linalg.norm(amps, axis=1) - norm0)))
    log.debug("non-linear solve T=%g [%g, %g] dt=%g: max norm drift %.3e",
              T, t_start, t_end, dt, drift)
    if not drift <= drift_tol:  # also catches overflow to nan
        raise AccuracyError(f"norm drift {drift:.3e} exceeds {drift_tol:.1e} "
                            f"(boundary at T={T}, interval [{t_start}, {t_end}], dt={dt})")
    return Trajectory(times, amps, derivs, tuple(dims), phi, float(T))


def rk4_linear(generator, t_from: float, t_to: float, dt: float, y0: np.ndarray) -> np.ndarray:
    """Integrate i dy/dt = G(t) y with RK4 on a uniform grid of step <= dt.

    ``generator(t)`` returns the Hermitian matrix G(t); ``y0`` may be a state
    or a matrix of column states.
    """
    span = t_to - t_from
    n = int(math.ceil(abs(span) / dt - 1e-9)) if span != 0 else 0
    y = np.array(y0, dtype=complex)
    if n == 0:
        return y
    h = span / n
    g_lo = generator(t_from)
    for j in range(n):
        t = t_from + j * h
        g_mid = generator(t + 0.5 * h)
        g_hi = generator(t_from + (j + 1) * h)
        k1 = -1j * (g_lo @ y)
        k2 = -1j * (g_mid @ (y + 0.5 * h * k1))
        k3 = -1j * (g_mid @ (y + 0.5 * h * k2))
        k4 = -1j * (g_hi @ (y + h * k3))
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        g_lo = g_hi
    return y


def _substeps(t_from: float, t_to: float, dt: float):
    span = t_to - t_from
    n = int(math.ceil(abs(span) / dt - 1e-9)) if span != 0 else 0
    h = span / n if n else 0.0
    nodes = t_from + h * np.arange(n + 1)
    if n:
        nodes[-1] = t_to
    return n, h, nodes, nodes[:-1] + 0.5 * h


def rk4_sampled(g_nodes: np.ndarray, g_mids: np.ndarray, h: float, y0: np.ndarray) -> np.ndarray:
    """The RK4 loop of :func:`rk4_linear` with the generator pre-sampled.

    ``g_nodes[j]`` is G at the j-th substep boundary, ``g_mids[j]`` at its
    midpoint.
    """
    y = np.array(y0, dtype=complex)
    a = -1j * np.asarray(g_nodes)
    m = -1j * np.asarray(g_mids)
    for j in range(len(m)):
        k1 = a[j] @ y
        k2 = m[j] @ (y + 0.5 * h * k1)
        k3 = m[j] @ (y + 0.5 * h * k2)
        k4 = a[j + 1] @ (y + h * k3)
        y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def _sampled_propagator(gen_batch, t_from: float, t_to: float, dt: float, dim: int) -> np.ndarray:
    n, h, nodes, mids = _substeps(t_from, t_to, dt)
    eye = np.eye(dim, dtype=complex)
    if n == 0:
        return eye
    return rk4_sampled(gen_batch(nodes), gen_batch(mids), h, eye)


@dataclass(frozen=True, eq=False)
class BoundaryPropagator:
    """Linear propagator from ``from_t`` to ``to_t`` and the boundary that drives it.

    ``boundary`` is a ``(state, T)`` pair, or a tuple of such pairs (one per
    factor) for factorized propagators.
    """

    matrix: LinearOperator
    from_t: float
    to_t: float
    boundary: tuple

    def unitarity_error(self) -> float:
        m = self.matrix.matrix
        return float(np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))))


def _trajectory_for(model, state, T, lo, hi, dt, trajectory):
    if trajectory is None:
        return solve_nonlinear(model, state, T, min(T, lo), max(T, hi), dt)
    if not trajectory.covers(lo, hi):
        raise ValueError(f"trajectory coverage gap: [{trajectory.times[0]}, "
                         f"{trajectory.times[-1]}] does not contain [{lo}, {hi}]")
    return trajectory


def boundary_propagator(model: Model, boundary_state, T: float, from_t: float, to_t: float,
                        dt: float = DEFAULT_DT, trajectory: Trajectory | None = None
                        ) -> BoundaryPropagator:
    """Propagator U_{phi(T)}(to_t, from_t) of the drive-linearized equation."""
    dims = model.dims
    phi = _as_amps(boundary_state, dims)
    traj = _trajectory_for(model, phi, T, min(from_t, to_t), max(from_t, to_t), dt, trajectory)
    D = int(np.prod(dims))
    if isinstance(model, SystemModel):
        def gens(ts):
            drives = traj.at_many(ts)
            return model.mixed_hamiltonians([drives] * len(model.parts), drives)
    else:
        def gens(ts):
            return model.hamiltonians(traj.at_many(ts))
    mat = _sampled_propagator(gens, from_t, to_t, dt, D)
    return BoundaryPropagator(LinearOperator(dims, mat), from_t, to_t,
                              (StateVector(dims, phi), float(T)))


def local_propagator(system: SystemModel, k: int, trajectory: Trajectory, from_t: float,
                     to_t: float, dt: float = DEFAULT_DT) -> np.ndarray:
    """Propagator of factor k alone, its potential driven by ``trajectory``."""
    if not trajectory.covers(min(from_t, to_t), max(from_t, to_t)):
        raise ValueError("trajectory coverage gap")
    return _sampled_propagator(lambda ts: system.local_generators(k, trajectory.at_many(ts)),
                               from_t, to_t, dt, system.dims[k])


def mixed_propagator(system: SystemModel, trajectories: Sequence[Trajectory], from_t: float,
                     to_t: float, dt: float = DEFAULT_DT,
                     int_trajectory: Trajectory | None = None) -> np.ndarray:
    """Joint propagator where factor k is driven by ``trajectories[k]``."""
    if system.nl_interaction is not None and int_trajectory is None:
        raise ValueError("a non-linear interaction needs its own (shared) drive")
    D = int(np.prod(system.dims))

    def gens(ts):
        drives = [tr.at_many(ts) for tr in trajectories]
        return system.mixed_hamiltonians(drives, None if int_trajectory is None
                                         else int_trajectory.at_many(ts))

    return _sampled_propagator(gens, from_t, to_t, dt, D)


def factorized_propagator(system: SystemModel, boundaries: Sequence[tuple], from_t: float,
                          to_t: float, dt: float = DEFAULT_DT,
                          trajectories: Sequence[Trajectory] | None = None
                          ) -> BoundaryPropagator:
    """Tensor product of per-factor propagators, each with its own boundary.

    ``boundaries[k]`` is a ``(joint_state, T)`` pair; factor k's potential is
    evaluated on the non-linear solution through that boundary.
    """
    if not system.factorizable:
        raise ValueError("cross-coupling present: system has an interaction term")
    if len(boundaries) != len(system.parts):
        raise ValueError(f"need {len(system.parts)} boundaries, got {len(boundaries)}")
    lo, hi = min(from_t, to_t), max(from_t, to_t)
    mats = []
    for k, (state, T) in enumerate(boundaries):
        traj = None if trajectories is None else trajectories[k]
        traj = _trajectory_for(system, state, T, lo, hi, dt, traj)
        mats.append(local_propagator(system, k, traj, from_t, to_t, dt))
    full = mats[0]
    for m in mats[1:]:
        full = np.kron(full, m)
    tags = tuple((StateVector(system.dims, _as_amps(s, system.dims)), float(T))
                 for s, T in boundaries)
    return BoundaryPropagator(LinearOperator(system.dims, full), from_t, to_t, tags)


def linear_propagator(h: np.ndarray, duration: float) -> np.ndarray:
    """exp(-i H t) by eigendecomposition of the Hermitian H."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * duration)) @ v.conj().T


class TrajectoryCache:
    """Memo of non-linear solutions keyed by boundary.

    A request outside a cached range triggers one re-solve over the union,
    which leaves the already-computed grid points unchanged.
    """

    def __init__(self, model: Model, dt: float):
        self.model = model
        self.dt = dt
        self._store: dict = {}

    def get(self, state: np.ndarray, T: float, lo: float, hi: float) -> Trajectory:
        key = (np.ascontiguousarray(state).tobytes(), float(T))
        lo, hi = min(lo, T), max(hi, T)
        traj = self._store.get(key)
        if traj is not None and traj.covers(lo, hi):
            return traj
        if traj is not None:
            lo, hi = min(lo, traj.times[0]), max(hi, traj.times[-1])
        traj = solve_nonlinear(self.model, state, T, lo, hi, self.dt)
        self._store[key] = traj
        return traj
