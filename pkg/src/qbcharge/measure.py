"""POVMs on the bath / reference and conditioning of the battery on their outcomes."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .qcore import DensityOperator, DimensionError, partial_trace_matrix

ZERO_PROB = 1e-12


class InvalidFrameError(ValueError):
    pass


class Povm:
    """Finite POVM on a single subsystem of dimension ``dim``.

    When built from rank-one data, ``vectors`` holds the unnormalized vectors
    v_k with elements v_k v_k^dagger; otherwise it is ``None``.
    """

    def __init__(self, elements: Sequence[np.ndarray], *, vectors: np.ndarray | None = None,
                 tol: float = 1e-9):
        els = [np.array(e, dtype=complex) for e in elements]
        if not els:
            raise InvalidFrameError("a POVM needs at least one element")
        d = els[0].shape[0]
        for e in els:
            if e.shape != (d, d):
                raise DimensionError("POVM elements must share one square shape")
            if np.abs(e - e.conj().T).max() > 1e-10:
                raise InvalidFrameError("POVM element is not Hermitian")
            if np.linalg.eigvalsh(e)[0] < -1e-10:
                raise InvalidFrameError("POVM element is not positive semidefinite")
        dev = np.abs(sum(els) - np.eye(d)).max()
        if dev > tol:
            raise InvalidFrameError(f"POVM elements sum to identity only within {dev:.2e}")
        self.elements = els
        self.dim = d
        self.vectors = vectors

    def __len__(self) -> int:
        return len(self.elements)

    @classmethod
    def trivial(cls, dim: int) -> "Povm":
        return cls([np.eye(dim)])

    @classmethod
    def computational(cls, dim: int) -> "Povm":
        return povm_from_isometry(np.eye(dim, dtype=complex))


def rank_one_povm(vectors, weights=None, tol: float = 1e-9) -> Povm:
    """POVM with elements w_i |v_i><v_i|; the frame must resolve the identity."""
    v = np.array(vectors, dtype=complex)
    if v.ndim != 2:
        raise InvalidFrameError("vectors must be a 2-D array, one vector per row")
    w = np.ones(len(v)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(v),) or np.any(w < 0):
        raise InvalidFrameError("weights must be nonnegative, one per vector")
    scaled = v * np.sqrt(w)[:, None]
    elements = [np.outer(x, x.conj()) for x in scaled]
    try:
        return Povm(elements, vectors=scaled, tol=tol)
    except InvalidFrameError as exc:
        raise InvalidFrameError(f"invalid frame: {exc}") from None


def povm_from_isometry(w: np.ndarray) -> Povm:
    """Rank-one POVM whose k-th vector is the conjugated k-th row of an n x d isometry.

    sum_k conj(W_k) W_k^T = W^dagger W = I, so any isometry defines a valid frame.
    """
    return rank_one_povm(np.conj(w))


def isometry_of(povm: Povm) -> np.ndarray:
    if povm.vectors is None:
        raise InvalidFrameError("POVM has no rank-one vector form")
    return np.conj(povm.vectors)


@dataclass(frozen=True)
class Outcome:
    probability: float
    state: DensityOperator
    label: tuple[int, ...]
    flagged: bool = False


@dataclass(frozen=True)
class ConditionedEnsemble:
    outcomes: tuple[Outcome, ...]

    def probabilities(self) -> np.ndarray:
        return np.array([o.probability for o in self.outcomes])

    def average_state(self) -> np.ndarray:
        return sum(o.probability * o.state.matrix for o in self.outcomes)


def _ensemble(blocks: np.ndarray, labels: list[tuple[int, ...]], ds: int) -> ConditionedEnsemble:
    out = []
    for m, label in zip(blocks, labels):
        p = float(np.real(np.trace(m)))
        if p < ZERO_PROB:
            out.append(Outcome(max(p, 0.0), DensityOperator.maximally_mixed(ds), label, True))
        else:
            out.append(Outcome(p, DensityOperator(m / p, (ds,), tol=1e-9), label))
    return ConditionedEnsemble(tuple(out))


def _check_joint(sigma: DensityOperator) -> tuple[int, int, int]:
    if len(sigma.dims) != 3:
        raise DimensionError(f"expected a (s, b, R) joint state, got dims {sigma.dims}")
    return sigma.dims  # type: ignore[return-value]


def condition_weak(sigma_sbR: DensityOperator, povm_b: Povm) -> ConditionedEnsemble:
    """Battery states conditioned on outcome k of a POVM on the bath, R ignored."""
    ds, db, dr = _check_joint(sigma_sbR)
    if povm_b.dim != db:
        raise DimensionError(f"bath POVM acts on dimension {povm_b.dim}, bath has {db}")
    sb = partial_trace_matrix(sigma_sbR.matrix, sigma_sbR.dims, [0, 1]).reshape(ds, db, ds, db)
    blocks = np.stack([np.einsum("icjb,bc->ij", sb, e) for e in povm_b.elements])
    return _ensemble(blocks, [(k,) for k in range(len(povm_b))], ds)


def condition_strong(sigma_sbR: DensityOperator, povm_b: Povm, povm_R: Povm) -> ConditionedEnsemble:
    """Battery states conditioned on the outcome pair (k, l) of a product POVM on b and R."""
    ds, db, dr = _check_joint(sigma_sbR)
    if povm_b.dim != db or povm_R.dim != dr:
        raise DimensionError("POVM dimensions do not match the bath / reference")
    t = sigma_sbR.matrix.reshape(ds, db, dr, ds, db, dr)
    blocks, labels = [], []
    for k, eb in enumerate(povm_b.elements):
        tk = np.einsum("icrjbq,bc->irjq", t, eb)
        for l, er in enumerate(povm_R.elements):
            blocks.append(np.einsum("irjq,qr->ij", tk, er))
            labels.append((k, l))
    return _ensemble(np.stack(blocks), labels, ds)


# Vectorized kernels for the optimizers.  With an n x d isometry W, the
# unnormalized conditioned states are the diagonal blocks of
# (I (x) W) sigma (I (x) W)^dagger.

def conditioned_blocks_weak(sigma_sb: np.ndarray, ds: int, wb: np.ndarray) -> np.ndarray:
    n = wb.shape[0]
    k = np.kron(np.eye(ds), wb)
    t = (k @ sigma_sb @ k.conj().T).reshape(ds, n, ds, n)
    return np.einsum("ikjk->kij", t)


def conditioned_blocks_strong(sigma_sbR: np.ndarray, ds: int, wb: np.ndarray, wr: np.ndarray) -> np.ndarray:
    nb, nr = wb.shape[0], wr.shape[0]
    k = np.kron(np.eye(ds), np.kron(wb, wr))
    t = (k @ sigma_sbR @ k.conj().T).reshape(ds, nb * nr, ds, nb * nr)
    return np.einsum("ikjk->kij", t)
