"""Retrieved free-energetic charge under weak (bath) and strong (bath + reference) assistance."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import entangle, thermo
from .channel import IsometricExtension, apply_extension
from .measure import (
    ConditionedEnsemble,
    Povm,
    condition_strong,
    condition_weak,
    conditioned_blocks_strong,
    conditioned_blocks_weak,
    isometry_of,
    povm_from_isometry,
)
from .qcore import (
    DensityOperator,
    isometry_from_params,
    params_from_isometry,
    partial_trace,
    partial_trace_matrix,
    purify,
)
from .thermo import Beta, Hamiltonian


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for the restarted simplex search over rank-one POVMs.

    ``outcomes_b`` / ``outcomes_R`` of ``None`` select the schedule (d, d**2)
    and keep the better of the two.
    """

    restarts: int = 32
    max_iters: int = 2000
    tol: float = 1e-8
    outcomes_b: int | None = None
    outcomes_R: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1 or self.max_iters < 1 or self.tol <= 0:
            raise ValueError("restarts and max_iters must be >= 1 and tol > 0")
        for n in (self.outcomes_b, self.outcomes_R):
            if n is not None and n < 1:
                raise ValueError("outcome counts must be >= 1")


@dataclass
class RetrievalResult:
    value_raw: float
    value_rescaled: float
    value_clamped: float
    achieving_povm_b: Povm
    achieving_povm_R: Povm | None
    restarts_used: int
    converged: bool
    best_trajectory: list[float] = field(default_factory=list)
    certified_optimal: bool = False


def retrieved_charge(ensemble: ConditionedEnsemble, h: Hamiltonian, beta: Beta) -> float:
    """Outcome-averaged raw free energy; flagged zero-probability outcomes are skipped."""
    thermo.inverse_beta(beta)
    return float(sum(o.probability * thermo.free_energy(o.state, h, beta)
                     for o in ensemble.outcomes if not o.flagged))


def _block_eigvals(blocks: np.ndarray) -> np.ndarray:
    if blocks.shape[1] == 2:
        a, d = blocks[:, 0, 0].real, blocks[:, 1, 1].real
        b2 = (blocks[:, 0, 1] * blocks[:, 0, 1].conj()).real
        mid, half = 0.5 * (a + d), np.sqrt(0.25 * (a - d) ** 2 + b2)
        return np.stack([mid - half, mid + half], axis=1)
    return np.linalg.eigvalsh(blocks)


def _blocks_value(blocks: np.ndarray, energies: np.ndarray, temp: float) -> float:
    """sum_k [Tr(H M_k) - T p_k S(M_k / p_k)] for unnormalized blocks M_k."""
    diag = np.real(np.einsum("kii->ki", blocks))
    e = float((diag @ energies).sum())
    if temp == 0.0:
        return e
    lam = _block_eigvals(blocks)
    pos = lam > 0
    safe = np.where(pos, lam, 1.0)
    p = np.where(pos, lam, 0.0).sum(axis=1)
    ent = -float(np.sum(np.where(pos, lam * np.log(safe), 0.0)))
    pp = p > 0
    ent += float(np.sum(np.where(pp, p * np.log(np.where(pp, p, 1.0)), 0.0)))
    return e - temp * ent


def _schedule(n: int | None, d: int) -> list[int]:
    if n is not None:
        if n > d * d:
            raise ValueError(f"outcome count {n} exceeds d^2 = {d * d}")
        return [n]
    return [d] if d == 1 else [d, d * d]


def _padded_eye(n: int, d: int) -> np.ndarray:
    w = np.zeros((n, d), dtype=complex)
    w[: min(n, d), : min(n, d)] = np.eye(min(n, d))
    return w


def _pad(w: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, w.shape[1]), dtype=complex)
    out[: min(n, w.shape[0])] = w[:n]
    return out


def _eigenbasis_isometry(marginal: np.ndarray, n: int) -> np.ndarray:
    # rows are conj(e_k)^T so that the POVM vectors are the eigenvectors e_k
    _, v = np.linalg.eigh(marginal)
    return _pad(v[:, ::-1].conj().T, n)


class _Search:
    """Restarted maximization of a function of one or more stacked isometries."""

    def __init__(self, shapes: Sequence[tuple[int, int]], value, upper: float, cfg: OptimizerConfig,
                 rng: np.random.Generator):
        self.shapes = list(shapes)
        self.sizes = [2 * a * b for a, b in self.shapes]
        self.value = value
        self.upper = upper
        self.cfg = cfg
        self.rng = rng

    def unpack(self, x: np.ndarray) -> list[np.ndarray]:
        out, i = [], 0
        for (a, b), s in zip(self.shapes, self.sizes):
            out.append(isometry_from_params(x[i:i + s], a, b))
            i += s
        return out

    def pack(self, isos: Sequence[np.ndarray]) -> np.ndarray:
        return np.concatenate([params_from_isometry(w) for w in isos])

    def random_start(self) -> np.ndarray:
        return self.rng.standard_normal(sum(self.sizes))

    def run(self, start: np.ndarray) -> tuple[np.ndarray, float]:
        fun = lambda x: -self.value(self.unpack(x))
        x, f = entangle.nelder_mead(fun, start, self.cfg.max_iters, self.cfg.tol * 1e-2)
        return x, -f


def _optimize(searches: list[tuple[_Search, list[np.ndarray | None]]], cfg: OptimizerConfig):
    """Run every (search, starts) stage, ``None`` starts meaning random.

    Stops early once a candidate reaches the analytic upper bound E(sigma_s),
    since no POVM can exceed it.
    """
    best = (-np.inf, None, None)
    trajectory: list[float] = []
    last_gain = np.inf
    used = 0
    certified = False
    for search, starts in searches:
        for start in starts:
            x0 = search.random_start() if start is None else start
            f0 = search.value(search.unpack(x0))
            if f0 >= search.upper - 1e-12:
                x, f = x0, f0
            else:
                x, f = search.run(x0)
            used += 1
            gain = f - best[0]
            if f > best[0]:
                best = (f, x, search)
            last_gain = gain
            trajectory.append(best[0])
            if best[0] >= search.upper - 1e-12:
                certified = True
                break
        if certified:
            break
    converged = certified or last_gain < cfg.tol
    return best, trajectory, used, converged, certified


def _starts(cfg: OptimizerConfig, fixed: list[np.ndarray]) -> list[np.ndarray | None]:
    starts: list[np.ndarray | None] = list(fixed[: cfg.restarts])
    starts += [None] * (cfg.restarts - len(starts))
    return starts


def _result(raw: float, h: Hamiltonian, beta: Beta, povm_b: Povm, povm_r: Povm | None,
            used: int, converged: bool, trajectory: list[float], certified: bool) -> RetrievalResult:
    rescaled = raw - thermo.thermal_free_energy(h, beta)
    return RetrievalResult(raw, rescaled, max(rescaled, 0.0), povm_b, povm_r, used,
                           converged, trajectory, certified)


def _prepare(ext: IsometricExtension, rho: DensityOperator):
    temp = thermo.inverse_beta(ext.beta)
    sigma = apply_extension(ext, rho)
    sigma_s = partial_trace(sigma, [0])
    return temp, sigma, sigma_s, thermo.energy(sigma_s, ext.hs)


def optimize_weak(ext: IsometricExtension, rho: DensityOperator,
                  cfg: OptimizerConfig | None = None) -> RetrievalResult:
    """Best retrieved charge found over rank-one POVMs on the bath.

    The value is a lower bound on W_weak.  Starts: computational basis,
    eigenbasis of the bath marginal, then seeded random isometries.  The
    search stops early at the analytic ceiling E(sigma_s) - E_f(sigma_sR)/beta
    when E_f has a closed form, else at E(sigma_s).
    """
    cfg = cfg or OptimizerConfig()
    temp, sigma, sigma_s, e_sigma = _prepare(ext, rho)
    ds, db, dr = sigma.dims
    ceiling = e_sigma
    if temp > 0 and (ds, dr) == (2, 2):
        ceiling = e_sigma - temp * entangle.eof_wootters(partial_trace(sigma, [0, 2])).value
    sigma_sb = partial_trace_matrix(sigma.matrix, sigma.dims, [0, 1])
    sigma_b = partial_trace_matrix(sigma.matrix, sigma.dims, [1])
    energies = ext.hs.energies
    rng = np.random.default_rng(cfg.seed)

    def value(isos):
        return _blocks_value(conditioned_blocks_weak(sigma_sb, ds, isos[0]), energies, temp)

    stages = []
    for n in _schedule(cfg.outcomes_b, db):
        s = _Search([(n, db)], value, ceiling, cfg, rng)
        fixed = [s.pack([_padded_eye(n, db)]), s.pack([_eigenbasis_isometry(sigma_b, n)])]
        stages.append((s, _starts(cfg, fixed)))
    (_, x, search), traj, used, converged, certified = _optimize(stages, cfg)
    povm_b = povm_from_isometry(search.unpack(x)[0])
    raw = retrieved_charge(condition_weak(sigma, povm_b), ext.hs, ext.beta)
    return _result(raw, ext.hs, ext.beta, povm_b, None, used, converged, traj, certified)


def optimize_strong(ext: IsometricExtension, rho: DensityOperator,
                    cfg: OptimizerConfig | None = None,
                    warm_start: Povm | None = None) -> RetrievalResult:
    """Best retrieved charge found over product rank-one POVMs on bath and reference.

    The first start is the computational product basis, which is optimal for
    pure batteries.  ``warm_start`` (typically the weak optimum) is refined
    by any rank-one reference POVM, so passing it guarantees the result is
    no worse than the weak value.
    """
    cfg = cfg or OptimizerConfig()
    temp, sigma, sigma_s, e_sigma = _prepare(ext, rho)
    ds, db, dr = sigma.dims
    energies = ext.hs.energies
    sigma_b = partial_trace_matrix(sigma.matrix, sigma.dims, [1])
    sigma_r = partial_trace_matrix(sigma.matrix, sigma.dims, [2])
    rng = np.random.default_rng(cfg.seed + 1)

    def value(isos):
        return _blocks_value(conditioned_blocks_strong(sigma.matrix, ds, isos[0], isos[1]),
                             energies, temp)

    sched_b = _schedule(cfg.outcomes_b, db)
    sched_r = _schedule(cfg.outcomes_R, dr)
    pairs = list(zip(sched_b, sched_r)) if len(sched_b) == len(sched_r) else \
        [(nb, nr) for nb in sched_b for nr in sched_r]
    stages = []
    for nb, nr in pairs:
        s = _Search([(nb, db), (nr, dr)], value, e_sigma, cfg, rng)
        fixed = [s.pack([_padded_eye(nb, db), _padded_eye(nr, dr)])]
        if warm_start is not None and warm_start.vectors is not None and len(warm_start) <= nb:
            fixed.append(s.pack([_pad(isometry_of(warm_start), nb), _padded_eye(nr, dr)]))
        fixed.append(s.pack([_eigenbasis_isometry(sigma_b, nb), _eigenbasis_isometry(sigma_r, nr)]))
        stages.append((s, _starts(cfg, fixed)))
    (_, x, search), traj, used, converged, certified = _optimize(stages, cfg)
    wb, wr = search.unpack(x)
    povm_b, povm_r = povm_from_isometry(wb), povm_from_isometry(wr)
    raw = retrieved_charge(condition_strong(sigma, povm_b, povm_r), ext.hs, ext.beta)
    return _result(raw, ext.hs, ext.beta, povm_b, povm_r, used, converged, traj, certified)


def optimize_joint(ext: IsometricExtension, rho: DensityOperator,
                   cfg: OptimizerConfig | None = None,
                   warm_start: tuple[Povm, Povm] | None = None) -> RetrievalResult:
    """Best retrieved charge found over rank-one POVMs acting jointly on bath and reference.

    Product POVMs are a special case, so this dominates ``optimize_strong``
    up to search error; the two coincide at E(sigma_s) for pure batteries.
    The achieving POVM lives on the d_b * d_R space and is returned as
    ``achieving_povm_b`` with ``achieving_povm_R`` left empty.
    ``cfg.outcomes_b`` sets the joint outcome count.  ``warm_start`` takes
    a product (bath, reference) POVM pair, typically the strong optimum, and
    makes the result no worse than it.
    """
    cfg = cfg or OptimizerConfig()
    temp, sigma, sigma_s, e_sigma = _prepare(ext, rho)
    ds, db, dr = sigma.dims
    d = db * dr
    energies = ext.hs.energies
    sigma_br = partial_trace_matrix(sigma.matrix, sigma.dims, [1, 2])
    rng = np.random.default_rng(cfg.seed + 2)

    def value(isos):
        return _blocks_value(conditioned_blocks_weak(sigma.matrix, ds, isos[0]), energies, temp)

    stages = []
    for n in _schedule(cfg.outcomes_b, d):
        s = _Search([(n, d)], value, e_sigma, cfg, rng)
        fixed = [s.pack([_padded_eye(n, d)])]
        if warm_start is not None:
            wb, wr = (isometry_of(p) for p in warm_start)
            if wb.shape[0] * wr.shape[0] <= n:
                fixed.append(s.pack([_pad(np.kron(wb, wr), n)]))
        fixed.append(s.pack([_eigenbasis_isometry(sigma_br, n)]))
        stages.append((s, _starts(cfg, fixed)))
    (_, x, search), traj, used, converged, certified = _optimize(stages, cfg)
    w = search.unpack(x)[0]
    grouped = DensityOperator(sigma.matrix, (ds, d, 1))  # bR as one "bath", trivial reference
    povm = povm_from_isometry(w)
    raw = retrieved_charge(condition_weak(grouped, povm), ext.hs, ext.beta)
    return _result(raw, ext.hs, ext.beta, povm, None, used, converged, traj, certified)


def eof_battery_reference(ext: IsometricExtension, rho: DensityOperator) -> float:
    """E_f(sigma_sR) in nats; exact (Wootters) for a qubit battery and qubit reference."""
    sigma_sr = partial_trace(apply_extension(ext, rho), [0, 2])
    if sigma_sr.dims != (2, 2):
        raise entangle.CapabilityError("closed-form E_f needs a qubit battery and qubit reference")
    return entangle.eof_wootters(sigma_sr).value


def weak_closed_form(ext: IsometricExtension, rho: DensityOperator,
                     search_cfg: entangle.SearchConfig | None = None) -> float:
    """E(sigma_s) - E_f(s | R R') / beta.

    For a pure battery R' is trivial and E_f(sigma_sR) is taken from the
    two-qubit closed form.  Otherwise sigma_sbR is purified onto its support
    and E_f(sigma_sRR') across s | RR' comes from the decomposition search,
    so the value is then a lower bound on W_weak.
    """
    temp, sigma, sigma_s, e_sigma = _prepare(ext, rho)
    if temp == 0.0:
        return e_sigma
    if rho.rank() == 1:
        return e_sigma - temp * eof_battery_reference(ext, rho)
    psi = purify(sigma, truncate=True)  # dims (s, b, R, R')
    rho_full = psi.to_density()
    sigma_srr = partial_trace(rho_full, [0, 2, 3])
    if sigma_srr.dim > entangle.MAX_TOTAL_DIM:
        raise entangle.CapabilityError(f"sigma_sRR' has dimension {sigma_srr.dim}")
    ef = entangle.eof_search(sigma_srr, (0,), search_cfg).value
    return e_sigma - temp * ef


@dataclass
class GapResult:
    gap: float
    weak: RetrievalResult
    strong: RetrievalResult


def assistance_gap(ext: IsometricExtension, rho: DensityOperator,
                   cfg: OptimizerConfig | None = None) -> GapResult:
    """W_strong - W_weak from the two optimizers, strong warm-started at the weak optimum."""
    weak = optimize_weak(ext, rho, cfg)
    strong = optimize_strong(ext, rho, cfg, warm_start=weak.achieving_povm_b)
    return GapResult(strong.value_raw - weak.value_raw, weak, strong)
