"""Executable checks of the retrieval theory over seeded random instances.

Every check samples its instances from ``numpy.random.SeedSequence(seed)``,
one child sequence per instance index, so results do not depend on how (or
whether) instances are spread over worker processes.  A check is a list of
named conditions per instance.  Each condition ``lhs <= rhs`` has its own
tolerance ``t`` and is reported as ``tolerance * (rhs - lhs) / t``, i.e. in
units of the check's headline tolerance: zero means exact, positive means
slack, and ``failures == count(margin < -tolerance)`` holds exactly.
"""
from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import thermo
from .channel import IsometricExtension, apply_extension, qubit_isometry
from .entangle import eof_wootters
from .measure import Povm, condition_strong, povm_from_isometry
from .qcore import (
    DensityOperator,
    StateVector,
    haar_unitary,
    partial_trace,
    permute_subsystems,
    purify,
    random_density,
    random_pure,
    tensor,
    trace_distance,
)
from .retrieval import (
    OptimizerConfig,
    assistance_gap,
    eof_battery_reference,
    optimize_strong,
    optimize_weak,
    retrieved_charge,
)
from .thermo import INFINITE, Hamiltonian

QUBIT = Hamiltonian([0.0, 1.0])
BETA_RANGE = (0.2, 5.0)
ANALYTIC_TOL = 1e-6
PROP1_TOL = 1e-6 + 1e-4
SATURATION_TOL = 2e-3
FACTOR_TOL = 1e-9
CONTROL_THRESHOLD = 0.01

# Per-instance optimizer budget.  Lower than the library default: the checks
# pair every optimized value with an analytic bound, and the qubit instances
# converge within two restarts.
VERIFY_OPTIMIZER = OptimizerConfig(restarts=2, max_iters=800)


def _c(z: complex) -> list[float]:
    return [float(np.real(z)), float(np.imag(z))]


def _cmat(m: np.ndarray) -> list:
    return [[_c(z) for z in row] for row in np.atleast_2d(m)]


@dataclass(frozen=True)
class Instance:
    """A qubit-family extension plus battery; everything needed to replay it."""

    alpha: complex
    beta: float
    phase_gamma: complex
    battery: np.ndarray
    pure: bool
    opt_seed: int

    def extension(self, beta: float | None = None) -> IsometricExtension:
        return qubit_isometry(self.alpha, self.beta if beta is None else beta, self.phase_gamma)

    def rho(self) -> DensityOperator:
        return DensityOperator(self.battery)

    def inputs(self) -> dict:
        return {
            "alpha": _c(self.alpha),
            "beta": "inf" if self.beta == INFINITE else float(self.beta),
            "gamma_phase": _c(self.phase_gamma),
            "battery": _cmat(self.battery),
            "pure": self.pure,
            "optimizer_seed": self.opt_seed,
        }


def sample_instance(seq: np.random.SeedSequence, pure: bool, *, alpha: complex | None = None,
                    beta: float | None = None) -> Instance:
    """Draw alpha uniformly in the unit disc radius, beta in BETA_RANGE and a Haar/HS battery."""
    rng = np.random.default_rng(seq)
    a = rng.uniform(0, 1) * np.exp(2j * np.pi * rng.uniform())
    b = rng.uniform(*BETA_RANGE)
    phase = np.exp(2j * np.pi * rng.uniform())
    rho = random_pure(2, rng).to_density() if pure else random_density(2, rng)
    opt_seed = int(rng.integers(2**31))
    return Instance(a if alpha is None else complex(alpha), b if beta is None else beta,
                    phase, rho.matrix, pure, opt_seed)


@dataclass
class CheckReport:
    check_name: str
    instances: int
    failures: int
    worst_margin: float
    tolerance: float
    seed: int
    details: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.failures == 0


class _Conditions:
    """Collects named inequalities ``lhs <= rhs`` with per-condition tolerances."""

    def __init__(self, headline: float):
        self.headline = headline
        self.items: dict[str, float] = {}

    def le(self, name: str, lhs: float, rhs: float, tol: float) -> None:
        # margin < -headline  <=>  lhs > rhs + tol
        self.items[name] = float(self.headline * (rhs - lhs) / tol) if tol > 0 else \
            (float(rhs - lhs) if rhs > lhs else -math.inf)

    def close(self, name: str, a: float, b: float, tol: float) -> None:
        self.le(name, abs(a - b), 0.0, tol)

    @property
    def margin(self) -> float:
        return min(self.items.values())


def _record(index: int, inputs: dict, values: dict, cond: _Conditions) -> dict:
    blob = json.dumps(inputs, sort_keys=True).encode()
    return {
        "index": index,
        "inputs_hash": hashlib.sha256(blob).hexdigest()[:16],
        "inputs": inputs,
        "values": {k: float(v) for k, v in values.items()},
        "conditions": cond.items,
        "margin": cond.margin,
    }


def _cfg(inst: Instance, cfg: OptimizerConfig) -> OptimizerConfig:
    return OptimizerConfig(cfg.restarts, cfg.max_iters, cfg.tol, cfg.outcomes_b, cfg.outcomes_R,
                           inst.opt_seed)


def _battery_marginals(ext: IsometricExtension, rho: DensityOperator):
    sigma = apply_extension(ext, rho)
    sigma_s = partial_trace(sigma, [0])
    return sigma, sigma_s, thermo.energy(sigma_s, ext.hs)


BATTERIES = ("both", "pure", "mixed")


def _is_pure(index: int, battery: str) -> bool:
    return battery == "pure" or (battery == "both" and index % 2 == 0)


# instance kernels: (index, seq, cfg) -> record.  Module level so they pickle.

def _prop1_instance(index: int, seq, cfg: OptimizerConfig, battery: str) -> dict:
    inst = sample_instance(seq, _is_pure(index, battery))
    ext, rho = inst.extension(), inst.rho()
    _, sigma_s, e = _battery_marginals(ext, rho)
    f = thermo.free_energy(sigma_s, ext.hs, ext.beta)
    g = assistance_gap(ext, rho, _cfg(inst, cfg))
    w, s = g.weak.value_raw, g.strong.value_raw
    c = _Conditions(PROP1_TOL)
    c.le("free_energy<=weak", f, w, PROP1_TOL)
    c.le("weak<=strong", w, s, PROP1_TOL)
    c.le("strong<=energy", s, e, PROP1_TOL)
    return _record(index, inst.inputs(), {"f_sigma": f, "w_weak": w, "w_strong": s, "e_sigma": e}, c)


def _thm1_instance(index: int, seq, cfg: OptimizerConfig, battery: str) -> dict:
    inst = sample_instance(seq, _is_pure(index, battery))
    ext, rho = inst.extension(), inst.rho()
    _, _, e = _battery_marginals(ext, rho)
    ef = eof_battery_reference(ext, rho)
    bound = e - ef / ext.beta
    w = optimize_weak(ext, rho, _cfg(inst, cfg)).value_raw
    c = _Conditions(SATURATION_TOL)
    c.le("weak<=bound", w, bound, ANALYTIC_TOL)
    if inst.pure:
        c.le("bound-weak<=slack", bound - w, 0.0, SATURATION_TOL)
    return _record(index, inst.inputs(), {"w_weak": w, "bound": bound, "eof_sR": ef, "e_sigma": e}, c)


def _eof_s_purifier(sigma: DensityOperator) -> float:
    """E_f between the battery and the purifying reference R' of sigma_sbR."""
    psi = purify(sigma, truncate=True)
    if psi.dims[-1] == 1:
        return 0.0
    sr = partial_trace(psi.to_density(), [0, 3])
    return eof_wootters(sr).value


def _thm2_instance(index: int, seq, cfg: OptimizerConfig, battery: str) -> dict:
    inst = sample_instance(seq, _is_pure(index, battery))
    ext, rho = inst.extension(), inst.rho()
    sigma, _, e = _battery_marginals(ext, rho)
    c = _Conditions(ANALYTIC_TOL)
    values = {"e_sigma": e}
    if inst.pure:
        comp = retrieved_charge(condition_strong(sigma, Povm.computational(2), Povm.computational(2)), ext.hs, ext.beta)
        rng = np.random.default_rng(inst.opt_seed)
        pb, pr = (povm_from_isometry(haar_unitary(2, rng)) for _ in range(2))
        rand = retrieved_charge(condition_strong(sigma, pb, pr), ext.hs, ext.beta)
        s = optimize_strong(ext, rho, _cfg(inst, cfg)).value_raw
        c.close("computational_basis=energy", comp, e, ANALYTIC_TOL)
        c.close("random_basis=energy", rand, e, ANALYTIC_TOL)
        c.close("strong=energy", s, e, ANALYTIC_TOL)
        values.update(w_computational=comp, w_random_basis=rand, w_strong=s)
    else:
        ef = _eof_s_purifier(sigma)
        s = optimize_strong(ext, rho, _cfg(inst, cfg)).value_raw
        c.le("strong<=purifier_bound", s, e - ef / ext.beta, ANALYTIC_TOL)
        values.update(w_strong=s, eof_sRprime=ef)
    return _record(index, inst.inputs(), values, c)


def _thm3_instance(index: int, seq, cfg: OptimizerConfig, battery: str) -> dict:
    pure = _is_pure(index // 2, battery)
    c = _Conditions(ANALYTIC_TOL)
    if index % 2 == 0:
        inst = sample_instance(seq, pure, alpha=0.0)
        ext, rho = inst.extension(), inst.rho()
        g = assistance_gap(ext, rho, _cfg(inst, cfg))
        e_tau = thermo.energy(thermo.thermal_state(ext.hs, ext.beta), ext.hs)
        c.le("weak_clamped=0", g.weak.value_clamped, 0.0, ANALYTIC_TOL)
        c.close("strong=energy(tau)", g.strong.value_raw, e_tau, ANALYTIC_TOL)
        values = {"w_weak_clamped": g.weak.value_clamped, "w_strong": g.strong.value_raw, "e_tau": e_tau}
        return _record(index, {**inst.inputs(), "part": "thermal_map"}, values, c)
    inst = sample_instance(seq, pure)
    values = {}
    for tag, beta in (("beta50", 50.0), ("inf", INFINITE)):
        ext, rho = inst.extension(beta), inst.rho()
        g = assistance_gap(ext, rho, _cfg(inst, cfg))
        c.le(f"gap_{tag}<=0", g.gap, 0.0, ANALYTIC_TOL)
        values[f"gap_{tag}"] = g.gap
        if beta == INFINITE:
            _, sigma_s, e = _battery_marginals(ext, rho)
            f = thermo.free_energy(sigma_s, ext.hs, beta)
            c.close("inf_free_energy=weak", f, g.weak.value_raw, ANALYTIC_TOL)
            c.close("inf_strong=energy", g.strong.value_raw, e, ANALYTIC_TOL)
            values.update(e_sigma=e, w_weak_inf=g.weak.value_raw)
    return _record(index, {**inst.inputs(), "part": "zero_temperature"}, values, c)


def _cor1_instance(index: int, seq, cfg: OptimizerConfig, battery: str) -> dict:
    inst = sample_instance(seq, _is_pure(index, battery))
    ext, rho = inst.extension(), inst.rho()
    ef = eof_battery_reference(ext, rho)
    g = assistance_gap(ext, rho, _cfg(inst, cfg))
    c = _Conditions(SATURATION_TOL)
    c.le("gap>=eof/beta", ef / ext.beta, g.gap, SATURATION_TOL)
    if inst.pure:
        c.le("gap<=eof/beta", g.gap, ef / ext.beta, SATURATION_TOL)
    values = {"gap": g.gap, "eof_over_beta": ef / ext.beta, "w_weak": g.weak.value_raw,
              "w_strong": g.strong.value_raw}
    return _record(index, inst.inputs(), values, c)


def factorization_distance(alpha: complex, beta: float, psi: StateVector) -> float:
    """Trace distance of sigma_sbR (reordered s, R, b) from |phi+><phi+|_sR (x) |psi><psi|_b."""
    ext = qubit_isometry(alpha, beta)
    sigma = ext.apply_pure(psi).to_density()
    target = tensor(thermo.purified_thermal(ext.hs, beta).to_density(), psi.to_density())
    return trace_distance(permute_subsystems(sigma, [0, 2, 1]), target)


def _case1_instance(index: int, seq, cfg: OptimizerConfig, battery: str) -> dict:
    rng = np.random.default_rng(seq)
    if index == 0:
        beta, psi = 1.0, StateVector(np.array([1.0, 1.0]) / math.sqrt(2))
    elif index == 1:
        beta, psi = 1.0, StateVector.basis(0, 2)
    else:
        beta, psi = float(rng.uniform(*BETA_RANGE)), random_pure(2, rng)
    d0 = factorization_distance(0.0, beta, psi)
    control = factorization_distance(0.3, beta, psi)
    c = _Conditions(FACTOR_TOL)
    c.le("alpha0_distance", d0, 0.0, FACTOR_TOL)
    inputs = {"beta": beta, "psi": [_c(z) for z in psi.amplitudes]}
    values = {"distance_alpha0": d0, "distance_alpha0.3": control}
    if index == 0:
        # negative control: the alpha = 0.3 output must visibly fail to factorize
        c.le("control_distance>0.01", CONTROL_THRESHOLD, control, 0.0)
    return _record(index, inputs, values, c)


def _run(name: str, kernel: Callable, n: int, seed: int, tolerance: float,
         cfg: OptimizerConfig | None, workers: int, battery: str = "both") -> CheckReport:
    if n < 1:
        raise ValueError("n must be >= 1")
    if battery not in BATTERIES:
        raise ValueError(f"battery must be one of {BATTERIES}")
    cfg = cfg or VERIFY_OPTIMIZER
    seqs = np.random.SeedSequence(seed).spawn(n)
    args = [(i, seqs[i], cfg, battery) for i in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            details = list(pool.map(kernel, *zip(*args)))
    else:
        details = [kernel(*a) for a in args]
    details.sort(key=lambda d: d["index"])
    margins = [d["margin"] for d in details]
    failures = sum(m < -tolerance for m in margins)
    return CheckReport(name, n, failures, min(margins), tolerance, seed, details)


def check_prop1(n: int = 100, seed: int = 0, cfg: OptimizerConfig | None = None,
                workers: int = 1, battery: str = "both") -> CheckReport:
    """F(sigma_s) <= W_weak <= W_strong <= E(sigma_s) on alternating pure / mixed batteries."""
    return _run("prop1", _prop1_instance, n, seed, PROP1_TOL, cfg, workers, battery)


def check_thm1(n: int = 100, seed: int = 0, cfg: OptimizerConfig | None = None,
               workers: int = 1, battery: str = "both") -> CheckReport:
    """W_weak <= E(sigma_s) - E_f(sigma_sR)/beta everywhere, with equality for pure batteries."""
    return _run("thm1", _thm1_instance, n, seed, SATURATION_TOL, cfg, workers, battery)


def check_thm2(n: int = 100, seed: int = 0, cfg: OptimizerConfig | None = None,
               workers: int = 1, battery: str = "both") -> CheckReport:
    """Strong assistance recovers E(sigma_s) from pure batteries with any projective product basis."""
    return _run("thm2", _thm2_instance, n, seed, ANALYTIC_TOL, cfg, workers, battery)


def check_thm3(n: int = 100, seed: int = 0, cfg: OptimizerConfig | None = None,
               workers: int = 1, battery: str = "both") -> CheckReport:
    """Thermal-map activation (even indices) and the zero-temperature collapse (odd indices)."""
    return _run("thm3", _thm3_instance, n, seed, ANALYTIC_TOL, cfg, workers, battery)


def check_cor1(n: int = 100, seed: int = 0, cfg: OptimizerConfig | None = None,
               workers: int = 1, battery: str = "both") -> CheckReport:
    """Gap >= E_f(sigma_sR)/beta, with equality for pure batteries."""
    return _run("cor1", _cor1_instance, n, seed, SATURATION_TOL, cfg, workers, battery)


def check_case1_factorization(seed: int = 0, n: int = 8, workers: int = 1) -> CheckReport:
    """alpha = 0 output is |phi+>_sR (x) |psi>_b; instance 0 also carries the alpha = 0.3 control."""
    return _run("case1", _case1_instance, n, seed, FACTOR_TOL, None, workers)


CHECKS: dict[str, Callable[..., CheckReport]] = {
    "prop1": check_prop1,
    "thm1": check_thm1,
    "thm2": check_thm2,
    "thm3": check_thm3,
    "cor1": check_cor1,
    "case1": lambda n, seed, cfg=None, workers=1: check_case1_factorization(seed, n, workers),
}


def run_suite(names: list[str], n: int, seed: int, cfg: OptimizerConfig | None = None,
              workers: int = 1) -> list[CheckReport]:
    unknown = [x for x in names if x not in CHECKS]
    if unknown:
        raise KeyError(f"unknown check(s): {', '.join(unknown)}; choose from {', '.join(CHECKS)} or all")
    return [CHECKS[x](n, seed, cfg=cfg, workers=workers) for x in names]
