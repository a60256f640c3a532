"""Entanglement of formation: pure-state entropy, two-qubit closed form, decomposition search."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .qcore import (
    DensityOperator,
    DimensionError,
    StateVector,
    entropy_from_eigs,
    isometry_from_params,
    params_from_isometry,
)

MAX_TOTAL_DIM = 16

_SYSY = np.kron(np.array([[0, -1j], [1j, 0]]), np.array([[0, -1j], [1j, 0]]))


class CapabilityError(RuntimeError):
    """Instance exceeds what the exact or search routines are built for."""


@dataclass
class EofResult:
    value: float
    method: str  # "pure-reduction" | "wootters" | "decomposition-search"
    certified: bool
    decomposition: list[tuple[float, StateVector]] | None = None
    restarts_used: int = 0


@dataclass
class SearchConfig:
    restarts: int = 8
    max_iters: int = 3000
    tol: float = 1e-10
    size: int | None = None  # decomposition size; default: max(rank, 4) capped at rank**2
    seed: int = 0


def binary_entropy(p: float) -> float:
    """Natural-log binary entropy."""
    return entropy_from_eigs(np.array([p, 1.0 - p]))


def _bipartition(dims: Sequence[int], cut: Sequence[int]) -> tuple[list[int], list[int], int, int]:
    cut = sorted(set(int(c) for c in cut))
    if not cut or cut[0] < 0 or cut[-1] >= len(dims) or len(cut) == len(dims):
        raise ValueError(f"cut {cut} is not a proper subset of {len(dims)} subsystems")
    rest = [i for i in range(len(dims)) if i not in cut]
    da = int(np.prod([dims[i] for i in cut]))
    db = int(np.prod([dims[i] for i in rest]))
    return cut, rest, da, db


def _as_matrices(vecs: np.ndarray, dims: Sequence[int], cut: list[int], rest: list[int]) -> np.ndarray:
    """Reshape a stack of vectors to (n, d_A, d_B) matrices for the A|B cut."""
    n = vecs.shape[0]
    t = vecs.reshape((n,) + tuple(dims))
    t = t.transpose([0] + [i + 1 for i in cut] + [i + 1 for i in rest])
    da = int(np.prod([dims[i] for i in cut]))
    return t.reshape(n, da, -1)


def eof_pure(psi: StateVector, cut: Sequence[int] = (0,)) -> EofResult:
    """Entropy of the reduced state of ``psi`` on the subsystems in ``cut``."""
    cut, rest, _, _ = _bipartition(psi.dims, cut)
    m = _as_matrices(psi.amplitudes[None, :], psi.dims, cut, rest)[0]
    sv = np.linalg.svd(m, compute_uv=False)
    return EofResult(entropy_from_eigs(sv ** 2), "pure-reduction", True,
                     [(1.0, psi)])


def _check_two_qubit(rho: DensityOperator) -> None:
    if rho.dim != 4 or (len(rho.dims) > 1 and tuple(rho.dims) != (2, 2)):
        raise DimensionError(f"two-qubit state required, got dims {rho.dims}")


def concurrence(rho: DensityOperator) -> float:
    _check_two_qubit(rho)
    # with rho = X X^dag, the lambdas are the singular values of X^T (sy sy) X;
    # this avoids square roots of nearly vanishing non-Hermitian eigenvalues
    w, v = np.linalg.eigh(rho.matrix)
    x = v * np.sqrt(np.clip(w, 0.0, None))
    lam = np.linalg.svd(x.T @ _SYSY @ x, compute_uv=False)
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def eof_from_concurrence(c: float) -> float:
    c = min(max(c, 0.0), 1.0)
    return binary_entropy(0.5 * (1.0 + np.sqrt(1.0 - c * c)))


def eof_wootters(rho: DensityOperator) -> EofResult:
    return EofResult(eof_from_concurrence(concurrence(rho)), "wootters", True)


def _batched_entropy(m: np.ndarray) -> np.ndarray:
    """sum over a stack of (d_A, d_B) matrices of -sum s^2 ln s^2 (unnormalized)."""
    s2 = np.linalg.svd(m, compute_uv=False) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(s2 > 0, -s2 * np.log(np.where(s2 > 0, s2, 1.0)), 0.0).sum(axis=1)
    p = s2.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ent += np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return ent


def eof_search(rho: DensityOperator, cut: Sequence[int] = (0,), cfg: SearchConfig | None = None) -> EofResult:
    """Upper bound on E_f from a derivative-free search over pure decompositions.

    Every decomposition of rho into m pure states has the form
    |w_i> = sum_j U_ij sqrt(l_j) |e_j> for an m x r isometry U, where
    (l_j, e_j) are the nonzero eigenpairs.  The average entanglement of the
    normalized |w_i> is minimized over U with restarted Nelder-Mead.
    """
    cfg = cfg or SearchConfig()
    if rho.dim > MAX_TOTAL_DIM:
        raise CapabilityError(f"total dimension {rho.dim} exceeds {MAX_TOTAL_DIM}")
    cut, rest, _, _ = _bipartition(rho.dims, cut)
    w, v = np.linalg.eigh(rho.matrix)
    keep = w > 1e-12
    lam, vec = w[keep][::-1], v[:, keep][:, ::-1]
    r = lam.size
    basis = _as_matrices((vec * np.sqrt(lam)).T, rho.dims, cut, rest)  # (r, d_A, d_B)

    if r == 1:
        psi = StateVector.normalized(vec[:, 0], rho.dims)
        res = eof_pure(psi, cut)
        return EofResult(res.value, "decomposition-search", False, [(1.0, psi)], 0)

    m = cfg.size or min(max(r, 4), r * r)
    m = max(m, r)

    def objective(x):
        u = isometry_from_params(x, m, r)
        states = np.einsum("ij,jab->iab", u, basis)
        return float(_batched_entropy(states).sum())

    rng = np.random.default_rng(cfg.seed)
    starts = [params_from_isometry(np.eye(m, r, dtype=complex))]
    for _ in range(cfg.restarts - 1):
        starts.append(rng.standard_normal(2 * m * r))
    best_x, best_f = None, np.inf
    for x0 in starts:
        x, f = nelder_mead(objective, x0, cfg.max_iters, cfg.tol)
        if f < best_f - 1e-15:
            best_x, best_f = x, f

    u = isometry_from_params(best_x, m, r)
    raw = (u @ (vec * np.sqrt(lam)).T)
    decomposition = []
    for row in raw:
        p = float(np.vdot(row, row).real)
        if p > 1e-14:
            decomposition.append((p, StateVector.normalized(row, rho.dims)))
    value = max(0.0, float(best_f))
    return EofResult(value, "decomposition-search", False, decomposition, len(starts))


def nelder_mead(fun, x0: np.ndarray, max_iters: int, tol: float, step: float = 0.25,
                max_rounds: int = 6) -> tuple[np.ndarray, float]:
    """Nelder-Mead restarted from its own optimum until a round gains less than ``tol``.

    Re-seeding the simplex around the incumbent counters the simplex collapse
    that plain Nelder-Mead suffers in a few tens of dimensions.
    """
    x = np.asarray(x0, dtype=float)
    f = fun(x)
    n = x.size
    budget = max_iters
    for _ in range(max_rounds):
        if budget <= 0:
            break
        simplex = np.vstack([x, x + step * np.eye(n)])
        res = minimize(fun, x, method="Nelder-Mead",
                       options={"initial_simplex": simplex, "maxiter": budget,
                                "maxfev": 2 * budget, "xatol": 1e-9, "fatol": tol * 0.1,
                                "adaptive": True})
        budget -= res.nit
        gain = f - res.fun
        if res.fun < f:
            x, f = res.x, float(res.fun)
        step = max(step * 0.3, 1e-3)
        if gain < tol:
            break
    return x, f
