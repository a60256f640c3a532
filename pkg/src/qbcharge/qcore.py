"""Dimension-tagged states and the linear algebra shared by every other module.

Subsystem order is fixed as (s, b, R[, R']) wherever a joint state appears;
index 0 is always the battery.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ATOL = 1e-10
# clamp window for eigenvalues that are negative only through rounding
EIG_CLAMP = 1e-10


class KindMismatchError(TypeError):
    pass


class DimensionError(ValueError):
    pass


class InvalidStateError(ValueError):
    pass


def _check_dims(dims: Iterable[int], size: int) -> tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if not dims or any(d < 1 for d in dims):
        raise DimensionError(f"invalid subsystem dimensions {dims}")
    if int(np.prod(dims)) != size:
        raise DimensionError(f"dims {dims} do not multiply to {size}")
    return dims


@dataclass(frozen=True, eq=False)
class StateVector:
    """Normalized pure state with its subsystem dimensions."""

    amplitudes: np.ndarray
    dims: tuple[int, ...]

    def __init__(self, amplitudes, dims: Sequence[int] | None = None, *, tol: float = ATOL):
        amp = np.array(amplitudes, dtype=complex).reshape(-1)
        dims = (amp.size,) if dims is None else dims
        dims = _check_dims(dims, amp.size)
        norm = np.linalg.norm(amp)
        if abs(norm - 1.0) > tol:
            raise InvalidStateError(f"state vector norm {norm:.3e} differs from 1")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def normalized(cls, amplitudes, dims: Sequence[int] | None = None) -> "StateVector":
        amp = np.asarray(amplitudes, dtype=complex).reshape(-1)
        norm = np.linalg.norm(amp)
        if norm == 0:
            raise InvalidStateError("zero vector cannot be normalized")
        return cls(amp / norm, dims)

    @classmethod
    def basis(cls, index: int, dim: int) -> "StateVector":
        amp = np.zeros(dim, dtype=complex)
        amp[index] = 1.0
        return cls(amp, (dim,))

    def to_density(self) -> "DensityOperator":
        return DensityOperator(np.outer(self.amplitudes, self.amplitudes.conj()), self.dims)

    def __len__(self) -> int:
        return self.amplitudes.size


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Hermitian, unit-trace, positive semidefinite matrix with subsystem dims."""

    matrix: np.ndarray
    dims: tuple[int, ...]

    def __init__(self, matrix, dims: Sequence[int] | None = None, *, tol: float = ATOL):
        mat = np.array(matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise DimensionError(f"density operator must be square, got shape {mat.shape}")
        dims = (mat.shape[0],) if dims is None else dims
        dims = _check_dims(dims, mat.shape[0])
        herm_dev = np.abs(mat - mat.conj().T).max()
        if herm_dev > tol:
            raise InvalidStateError(f"matrix is not Hermitian (deviation {herm_dev:.3e})")
        mat = 0.5 * (mat + mat.conj().T)
        tr = np.trace(mat).real
        if abs(tr - 1.0) > tol:
            raise InvalidStateError(f"trace {tr:.12g} differs from 1")
        min_eig = np.linalg.eigvalsh(mat)[0]
        if min_eig < -tol:
            raise InvalidStateError(f"matrix has negative eigenvalue {min_eig:.3e}")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "dims", dims)

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityOperator":
        return cls(np.eye(dim) / dim, (dim,))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def eigvals(self) -> np.ndarray:
        """Ascending eigenvalues, with rounding-level negatives clamped to zero."""
        w = np.linalg.eigvalsh(self.matrix)
        return np.where((w < 0) & (w >= -EIG_CLAMP), 0.0, w)

    def rank(self, tol: float = 1e-9) -> int:
        return int(np.sum(np.linalg.eigvalsh(self.matrix) > tol))

    def purity(self) -> float:
        return float(np.real(np.trace(self.matrix @ self.matrix)))


def tensor(a, b):
    """Kronecker product of two states of the same kind; dims are concatenated."""
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(np.kron(a.amplitudes, b.amplitudes), a.dims + b.dims)
    if isinstance(a, DensityOperator) and isinstance(b, DensityOperator):
        return DensityOperator(np.kron(a.matrix, b.matrix), a.dims + b.dims)
    raise KindMismatchError(
        f"cannot tensor {type(a).__name__} with {type(b).__name__}"
    )


def partial_trace_matrix(mat: np.ndarray, dims: Sequence[int], keep: Iterable[int]) -> np.ndarray:
    """Partial trace on a raw square array. ``keep`` is returned in ascending order."""
    dims = tuple(dims)
    n = len(dims)
    keep = sorted(set(int(k) for k in keep))
    if not keep:
        raise ValueError("keep set must be nonempty")
    if keep[0] < 0 or keep[-1] >= n:
        raise ValueError(f"subsystem index out of range for dims {dims}: {keep}")
    traced = [i for i in range(n) if i not in keep]
    t = np.asarray(mat).reshape(dims + dims)
    # trace from the highest index down so lower axis numbers stay valid
    for i in reversed(traced):
        cur = t.ndim // 2
        t = np.trace(t, axis1=i, axis2=i + cur)
    d = int(np.prod([dims[k] for k in keep]))
    return t.reshape(d, d)


def partial_trace(rho: DensityOperator, keep: Iterable[int]) -> DensityOperator:
    keep = sorted(set(int(k) for k in keep))
    mat = partial_trace_matrix(rho.matrix, rho.dims, keep)
    return DensityOperator(mat, tuple(rho.dims[k] for k in keep), tol=1e-9)


def permute_subsystems(rho: DensityOperator, order: Sequence[int]) -> DensityOperator:
    """Reorder tensor factors: new subsystem i is old subsystem ``order[i]``."""
    n = len(rho.dims)
    order = list(order)
    if sorted(order) != list(range(n)):
        raise ValueError(f"{order} is not a permutation of {n} subsystems")
    t = rho.matrix.reshape(rho.dims + rho.dims)
    t = t.transpose(order + [n + i for i in order])
    dims = tuple(rho.dims[i] for i in order)
    return DensityOperator(t.reshape(rho.dim, rho.dim), dims)


def purify(rho: DensityOperator, *, truncate: bool = False, tol: float = 1e-12) -> StateVector:
    """Spectral purification sum_i sqrt(l_i) |e_i>|i>.

    Eigenvalues are taken in descending order and the ancilla index runs over
    the computational basis.  The ancilla has dimension ``d`` unless
    ``truncate`` is set, in which case it only spans the support of ``rho``.
    """
    w, v = np.linalg.eigh(rho.matrix)
    w, v = w[::-1], v[:, ::-1]
    w = np.clip(w, 0.0, None)
    k = int(np.sum(w > tol)) if truncate else rho.dim
    k = max(k, 1)
    # column i of v scaled by sqrt(w_i), placed against ancilla |i>
    psi = (v[:, :k] * np.sqrt(w[:k])).reshape(-1)
    return StateVector.normalized(psi, rho.dims + (k,))


def entropy_from_eigs(w: np.ndarray) -> float:
    w = np.asarray(w, dtype=float)
    w = w[w > 0]
    return float(-np.sum(w * np.log(w))) + 0.0  # + 0.0 turns -0.0 into 0.0


def vn_entropy(rho: DensityOperator) -> float:
    """von Neumann entropy in nats."""
    return entropy_from_eigs(rho.eigvals())


def trace_distance(rho: DensityOperator, sigma: DensityOperator) -> float:
    if rho.dim != sigma.dim:
        raise DimensionError(f"dimension mismatch: {rho.dim} vs {sigma.dim}")
    # Hermitian difference: singular values are |eigenvalues|
    return float(0.5 * np.sum(np.abs(np.linalg.eigvalsh(rho.matrix - sigma.matrix))))


def random_density(dim: int, rng: np.random.Generator, rank: int | None = None) -> DensityOperator:
    """Random mixed state from a complex Ginibre matrix of the given rank."""
    rank = dim if rank is None else rank
    g = rng.standard_normal((dim, rank)) + 1j * rng.standard_normal((dim, rank))
    m = g @ g.conj().T
    return DensityOperator(m / np.trace(m).real)


def random_pure(dim: int, rng: np.random.Generator) -> StateVector:
    z = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    return StateVector.normalized(z)


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def isometry_from_params(x: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Map ``2*rows*cols`` reals to a ``rows x cols`` isometry via the polar factor A (A^dagger A)^(-1/2).

    Any isometry is reached (it is its own polar factor), and the map is
    smooth wherever the parameter matrix has full column rank.
    """
    n = rows * cols
    a = x[:n].reshape(rows, cols) + 1j * x[n : 2 * n].reshape(rows, cols)
    if cols == 1:
        return a / np.sqrt(np.vdot(a, a).real)
    if cols == 2:
        # closed-form inverse square root of the 2x2 Gram matrix
        g = a.conj().T @ a
        p, q, c = g[0, 0].real, g[1, 1].real, g[0, 1]
        det = p * q - (c * c.conjugate()).real
        if det > 1e-300:
            s = np.sqrt(det)
            t = np.sqrt(p + q + 2 * s)
            # sqrt(G) = (G + s I) / t; invert the 2x2 directly
            m00, m11, m01 = (p + s) / t, (q + s) / t, c / t
            dm = m00 * m11 - (m01 * m01.conjugate()).real
            inv = np.array([[m11, -m01], [-m01.conjugate(), m00]]) / dm
            return a @ inv
    u, _, vh = np.linalg.svd(a, full_matrices=False)
    return u @ vh


def params_from_isometry(w: np.ndarray) -> np.ndarray:
    return np.concatenate([w.real.ravel(), w.imag.ravel()])
