"""Dense linear algebra on small tensor-product Hilbert spaces.

Factor order is fixed when a space is declared: ``dims=(2, 2)`` means
subsystem 0 is the left Kronecker factor.  Nothing in this module reorders
factors implicitly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Sequence, Union

import numpy as np

TOL = 1e-12

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY_2 = np.eye(2, dtype=complex)
PAULI = {"i": IDENTITY_2, "x": SIGMA_X, "y": SIGMA_Y, "z": SIGMA_Z}


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex)
    arr.setflags(write=False)
    return arr


def _check_dims(dims: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if not dims or any(d < 2 for d in dims):
        raise ValueError(f"factor dimensions must each be >= 2, got {dims}")
    return dims


@dataclass(frozen=True, eq=False)
class StateVector:
    dims: tuple[int, ...]
    amps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dims", _check_dims(self.dims))
        amps = _frozen(np.ravel(self.amps))
        if amps.size != int(np.prod(self.dims)):
            raise ValueError(f"{amps.size} amplitudes do not fit dims {self.dims}")
        object.__setattr__(self, "amps", amps)

    @property
    def size(self) -> int:
        return self.amps.size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def is_normalized(self, tol: float = TOL) -> bool:
        return abs(self.norm() - 1.0) < tol

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.dims, self.amps / n)

    def __eq__(self, other):
        if not isinstance(other, StateVector):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.amps, other.amps)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class LinearOperator:
    dims: tuple[int, ...]
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dims", _check_dims(self.dims))
        m = _frozen(self.matrix)
        n = int(np.prod(self.dims))
        if m.shape != (n, n):
            raise ValueError(f"matrix of shape {m.shape} does not fit dims {self.dims}")
        object.__setattr__(self, "matrix", m)

    def is_hermitian(self, tol: float = TOL) -> bool:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T))) < tol

    def dagger(self) -> "LinearOperator":
        return LinearOperator(self.dims, self.matrix.conj().T)

    def __matmul__(self, other):
        if isinstance(other, LinearOperator):
            if other.dims != self.dims:
                raise ValueError(f"dimension mismatch {self.dims} vs {other.dims}")
            return LinearOperator(self.dims, self.matrix @ other.matrix)
        if isinstance(other, StateVector):
            if other.dims != self.dims:
                raise ValueError(f"dimension mismatch {self.dims} vs {other.dims}")
            return StateVector(self.dims, self.matrix @ other.amps)
        return NotImplemented

    def __eq__(self, other):
        if not isinstance(other, LinearOperator):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.matrix, other.matrix)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class Basis:
    """Orthonormal basis of one tensor factor.

    ``vectors[k]`` is the k-th outcome's eigenvector on the factor at index
    ``subsystem``.
    """

    subsystem: int
    vectors: np.ndarray

    def __post_init__(self):
        v = _frozen(np.atleast_2d(self.vectors))
        d = v.shape[1]
        if v.shape[0] != d or d < 2:
            raise ValueError(f"basis needs d vectors of length d >= 2, got shape {v.shape}")
        gram = v.conj() @ v.T
        if float(np.max(np.abs(gram - np.eye(d)))) >= TOL:
            raise ValueError("basis vectors are not orthonormal")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "subsystem", int(self.subsystem))

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]

    def __len__(self):
        return self.dim

    def __eq__(self, other):
        if not isinstance(other, Basis):
            return NotImplemented
        return self.subsystem == other.subsystem and np.array_equal(self.vectors, other.vectors)

    __hash__ = None


def computational_basis(subsystem: int, dim: int = 2) -> Basis:
    return Basis(subsystem, np.eye(dim))


def bloch_vector_state(theta: float, phi: float = 0.0) -> np.ndarray:
    """Qubit state cos(theta/2)|0> + e^{i phi} sin(theta/2)|1>."""
    return np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])


def bloch_basis(subsystem: int, theta: float, phi: float = 0.0) -> Basis:
    """Qubit basis whose outcome 0 points along the Bloch direction (theta, phi)."""
    up = bloch_vector_state(theta, phi)
    down = np.array([-np.conj(up[1]), np.conj(up[0])])
    return Basis(subsystem, np.array([up, down]))


def named_basis(subsystem: int, name: str) -> Basis:
    name = name.lower()
    if name == "z":
        return bloch_basis(subsystem, 0.0)
    if name == "x":
        return bloch_basis(subsystem, np.pi / 2)
    if name == "y":
        return bloch_basis(subsystem, np.pi / 2, np.pi / 2)
    raise ValueError(f"unknown basis name {name!r}")


def basis_state(dims: Sequence[int], index: Sequence[int]) -> StateVector:
    """Product of computational basis kets, e.g. basis_state((2, 2), (0, 1)) = |01>."""
    dims = tuple(dims)
    amps = np.zeros(int(np.prod(dims)), dtype=complex)
    amps[np.ravel_multi_index(tuple(index), dims)] = 1.0
    return StateVector(dims, amps)


Tensorable = Union[StateVector, LinearOperator]


def tensor(*items: Tensorable) -> Tensorable:
    """Kronecker product in argument order."""
    if not items:
        raise ValueError("tensor needs at least one factor")
    if all(isinstance(i, StateVector) for i in items):
        dims = sum((i.dims for i in items), ())
        return StateVector(dims, reduce(np.kron, (i.amps for i in items)))
    if all(isinstance(i, LinearOperator) for i in items):
        dims = sum((i.dims for i in items), ())
        return LinearOperator(dims, reduce(np.kron, (i.matrix for i in items)))
    raise TypeError("tensor factors must be all states or all operators")


def embed_matrix(mat: np.ndarray, target: int, dims: Sequence[int]) -> np.ndarray:
    left = int(np.prod(dims[:target], dtype=int))
    right = int(np.prod(dims[target + 1:], dtype=int))
    return np.kron(np.kron(np.eye(left), mat), np.eye(right))


def embed(op: LinearOperator, target: int, dims: Sequence[int]) -> LinearOperator:
    """Lift a single-factor operator to the full space, identity elsewhere."""
    dims = _check_dims(dims)
    if not 0 <= target < len(dims):
        raise ValueError(f"target {target} out of range for {len(dims)} factors")
    if op.dims != (dims[target],):
        raise ValueError(f"operator dims {op.dims} do not match factor {target} of {dims}")
    return LinearOperator(dims, embed_matrix(op.matrix, target, dims))


def apply_local(mat: np.ndarray, target: int, dims: Sequence[int], psi: np.ndarray) -> np.ndarray:
    """(I ⊗ mat ⊗ I) @ psi without building the full matrix.

    ``psi`` may carry trailing columns (shape (D,) or (D, m)).
    """
    extra = psi.shape[1:]
    t = psi.reshape(tuple(dims) + extra)
    t = np.tensordot(mat, t, axes=([1], [target]))
    t = np.moveaxis(t, 0, target)
    return t.reshape(psi.shape)


def marginal_populations(psi: np.ndarray, target: int, dims: Sequence[int]) -> np.ndarray:
    """Computational-basis populations of one factor."""
    p = np.abs(psi.reshape(tuple(dims))) ** 2
    axes = tuple(i for i in range(len(dims)) if i != target)
    return p.sum(axis=axes) if axes else p


def local_expectation(mat: np.ndarray, target: int, dims: Sequence[int], psi: np.ndarray) -> complex:
    return complex(np.vdot(psi, apply_local(mat, target, dims, psi)))


def projector(basis: Basis, k: int) -> LinearOperator:
    if not 0 <= k < basis.dim:
        raise IndexError(f"outcome {k} out of range for a {basis.dim}-outcome basis")
    v = basis.vectors[k]
    return LinearOperator((basis.dim,), np.outer(v, v.conj()))


def expectation(state: StateVector, op: LinearOperator) -> complex:
    if state.dims != op.dims:
        raise ValueError(f"dimension mismatch {state.dims} vs {op.dims}")
    return complex(np.vdot(state.amps, op.matrix @ state.amps))


def named_state(name: str, dims: Sequence[int]) -> StateVector:
    """'bell' (|00>+|11>)/sqrt2, 'singlet', 'ghz' on n qubits, 'up'/'zero' = |0...0>."""
    dims = _check_dims(dims)
    name = name.lower()
    n = len(dims)
    if name in ("up", "zero"):
        return basis_state(dims, (0,) * n)
    if name in ("bell", "ghz"):
        if any(d != 2 for d in dims) or (name == "bell" and n != 2):
            raise ValueError(f"{name!r} state needs qubit factors, got {dims}")
        amps = np.zeros(2 ** n, dtype=complex)
        amps[0] = amps[-1] = 1 / np.sqrt(2)
        return StateVector(dims, amps)
    if name == "singlet":
        if dims != (2, 2):
            raise ValueError("singlet needs dims (2, 2)")
        return StateVector(dims, np.array([0, 1, -1, 0]) / np.sqrt(2))
    raise ValueError(f"unknown named state {name!r}")


def random_state(dims: Sequence[int], rng: np.random.Generator) -> StateVector:
    n = int(np.prod(dims))
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    return StateVector(dims, v / np.linalg.norm(v))


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * (a + a.conj().T) / 2


def random_basis(subsystem: int, dim: int, rng: np.random.Generator) -> Basis:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, _ = np.linalg.qr(a)
    return Basis(subsystem, q.T)
