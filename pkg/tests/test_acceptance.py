"""Acceptance criteria, each at its stated tolerance, one PASS/FAIL line per criterion."""
import time

import numpy as np
import pytest

from qbcharge import cli
from qbcharge.channel import channel_output
from qbcharge.entangle import SearchConfig, eof_search, eof_wootters
from qbcharge.qcore import DensityOperator, random_density, random_pure, trace_distance
from qbcharge.retrieval import OptimizerConfig, assistance_gap, optimize_strong, optimize_weak
from qbcharge.thermo import INFINITE, Hamiltonian, energy, free_energy, thermal_state
from qbcharge.verify import (
    VERIFY_OPTIMIZER,
    check_case1_factorization,
    check_cor1,
    check_prop1,
    check_thm1,
    check_thm2,
    sample_instance,
)
from qbcharge.channel import qubit_isometry

from test_channel import random_general_extension, random_qubit_extension

QUBIT = Hamiltonian([0, 1])
SEED = 2024


@pytest.fixture
def report(capsys):
    def emit(number, passed, summary, elapsed, budget):
        status = "PASS" if passed else "FAIL"
        with capsys.disabled():
            print(f"\nCRITERION {number:>2}: {status}  {summary}  [{elapsed:.1f} s, budget {budget} s]")
    return emit


def test_criterion_01_alpha_one_closed_form(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED)
    ext = qubit_isometry(1.0, 1.0)
    worst = 0.0
    for i in range(10):
        psi = random_pure(2, rng)
        b2 = abs(psi.amplitudes[1]) ** 2
        cfg = OptimizerConfig(restarts=2, max_iters=800, seed=i)
        for res in (optimize_weak(ext, psi.to_density(), cfg), optimize_strong(ext, psi.to_density(), cfg)):
            worst = max(worst, abs(res.value_raw - b2))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 30
    report(1, ok, f"max |W - |b|^2| = {worst:.2e} (tol 1e-4)", elapsed, 30)
    assert ok


def test_criterion_02_thermal_map_activation(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 2)
    worst_weak = worst_strong = 0.0
    for beta in (0.5, 1.0, 2.0):
        ext = qubit_isometry(0.0, beta)
        e_tau = energy(thermal_state(QUBIT, beta), QUBIT)
        batteries = [random_pure(2, rng).to_density() for _ in range(5)] + \
            [random_density(2, rng) for _ in range(5)]
        for i, rho in enumerate(batteries):
            g = assistance_gap(ext, rho, OptimizerConfig(restarts=2, max_iters=800, seed=i))
            worst_weak = max(worst_weak, g.weak.value_clamped)
            worst_strong = max(worst_strong, abs(g.strong.value_raw - e_tau))
    elapsed = time.perf_counter() - t0
    ok = worst_weak <= 1e-6 and worst_strong <= 1e-6 and elapsed < 30
    report(2, ok, f"max w_weak_clamped = {worst_weak:.2e}, max |w_strong - E(tau)| = {worst_strong:.2e} "
                  "(tol 1e-6)", elapsed, 30)
    assert ok


def test_criterion_03_ordering_chain(report):
    t0 = time.perf_counter()
    rep = check_prop1(100, SEED)
    elapsed = time.perf_counter() - t0
    ok = rep.failures == 0 and elapsed < 180
    report(3, ok, f"{rep.failures}/{rep.instances} failures, worst margin {rep.worst_margin:.2e} "
                  f"(tol {rep.tolerance:.1e})", elapsed, 180)
    assert ok


def test_criterion_04_weak_saturates_entanglement_bound(report):
    t0 = time.perf_counter()
    rep = check_thm1(25, SEED, battery="pure")
    gaps = [abs(d["values"]["w_weak"] - d["values"]["bound"]) for d in rep.details]
    elapsed = time.perf_counter() - t0
    ok = max(gaps) <= 2e-3 and elapsed < 120
    report(4, ok, f"max |W_weak - (E - E_f/beta)| = {max(gaps):.2e} (tol 2e-3)", elapsed, 120)
    assert ok


def test_criterion_05_strong_recovers_energy(report):
    t0 = time.perf_counter()
    rep = check_thm2(25, SEED, battery="pure")
    keys = ("w_computational", "w_random_basis", "w_strong")
    dev = max(abs(d["values"][k] - d["values"]["e_sigma"]) for d in rep.details for k in keys)
    elapsed = time.perf_counter() - t0
    ok = dev <= 1e-6 and rep.failures == 0 and elapsed < 60
    report(5, ok, f"max |W_strong - E(sigma_s)| over analytic, random and optimized bases = {dev:.2e} "
                  "(tol 1e-6)", elapsed, 60)
    assert ok


def test_criterion_06_gap_exceeds_entanglement_over_beta(report):
    t0 = time.perf_counter()
    pure = check_cor1(25, SEED, battery="pure")
    mixed = check_cor1(25, SEED, battery="mixed")
    pure_dev = max(abs(d["values"]["gap"] - d["values"]["eof_over_beta"]) for d in pure.details)
    mixed_short = max(d["values"]["eof_over_beta"] - d["values"]["gap"] for d in mixed.details)
    n_bad = sum(d["values"]["gap"] < d["values"]["eof_over_beta"] - 2e-3 for d in mixed.details)
    elapsed = time.perf_counter() - t0
    ok_pure = pure_dev <= 2e-3
    ok_mixed = n_bad == 0
    ok = ok_pure and ok_mixed and elapsed < 120
    report(6, ok, f"pure: max |gap - E_f/beta| = {pure_dev:.2e} ({'ok' if ok_pure else 'FAIL'}); "
                  f"mixed: {n_bad}/25 below E_f/beta - 2e-3, worst shortfall {mixed_short:.2e} "
                  f"({'ok' if ok_mixed else 'FAIL'})", elapsed, 120)
    assert ok


def test_criterion_07_zero_temperature_collapse(report):
    t0 = time.perf_counter()
    seqs = np.random.SeedSequence(SEED).spawn(10)
    worst = -np.inf
    for i, seq in enumerate(seqs):
        inst = sample_instance(seq, pure=i % 2 == 0)
        cfg = OptimizerConfig(VERIFY_OPTIMIZER.restarts, VERIFY_OPTIMIZER.max_iters, seed=inst.opt_seed)
        for beta in (50.0, INFINITE):
            worst = max(worst, assistance_gap(inst.extension(beta), inst.rho(), cfg).gap)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 30
    report(7, ok, f"max gap at beta = 50 and inf = {worst:.2e} (tol 1e-6)", elapsed, 30)
    assert ok


def test_criterion_08_eof_oracle_agreement(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 8)
    worst = 0.0
    for i in range(20):
        rho = DensityOperator(random_density(4, rng, rank=1 + i % 4).matrix, (2, 2))
        s = eof_search(rho, cfg=SearchConfig(restarts=2, max_iters=1500, seed=i)).value
        worst = max(worst, abs(s - eof_wootters(rho).value))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-3 and elapsed < 60
    report(8, ok, f"max |search - Wootters| = {worst:.2e} (tol 1e-3)", elapsed, 60)
    assert ok


def test_criterion_09_channel_sanity(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(SEED + 9)
    fixed = 0.0
    for i in range(50):
        ext = random_qubit_extension(rng) if i % 2 else random_general_extension(rng)
        tau = thermal_state(ext.hs, ext.beta)
        fixed = max(fixed, trace_distance(channel_output(ext, tau), tau))
    rise = -np.inf
    for i in range(200):
        ext = random_qubit_extension(rng) if i % 2 else random_general_extension(rng)
        rho = random_density(ext.ds, rng, rank=int(rng.integers(1, ext.ds + 1)))
        rise = max(rise, free_energy(channel_output(ext, rho), ext.hs, ext.beta) - free_energy(rho, ext.hs, ext.beta))
    elapsed = time.perf_counter() - t0
    ok = fixed <= 1e-9 and rise <= 1e-9 and elapsed < 60
    report(9, ok, f"max D(L(tau), tau) = {fixed:.2e}, max free-energy increase = {rise:.2e} (tol 1e-9)",
           elapsed, 60)
    assert ok


def test_criterion_10_alpha_zero_factorization(report):
    t0 = time.perf_counter()
    rep = check_case1_factorization(SEED, n=10)
    worst = max(d["values"]["distance_alpha0"] for d in rep.details)
    control = rep.details[0]["values"]["distance_alpha0.3"]
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and control > 0.01 and elapsed < 10
    report(10, ok, f"max alpha=0 distance = {worst:.2e} (tol 1e-9), alpha=0.3 control = {control:.3f} (> 0.01)",
           elapsed, 10)
    assert ok


def test_criterion_11_verify_determinism(report, tmp_path, capsys):
    t0 = time.perf_counter()
    outs = []
    for k in range(2):
        path = tmp_path / f"run{k}.csv"
        cli.main(["verify", "--suite", "all", "--instances", "3", "--seed", str(SEED),
                  "--workers", "1", "--out", str(path)])
        outs.append(path.read_bytes())
    capsys.readouterr()
    elapsed = time.perf_counter() - t0
    ok = outs[0] == outs[1] and len(outs[0]) > 0
    report(11, ok, f"two verify --suite all runs byte-identical: {ok} ({len(outs[0])} bytes)", elapsed, "-")
    assert ok
