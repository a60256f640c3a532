import numpy as np
import pytest

from qbcharge import verify
from qbcharge.channel import IsometricExtension, local_energy_preserving_unitary, qubit_isometry
from qbcharge.qcore import StateVector, random_density, random_pure
from qbcharge.retrieval import assistance_gap, optimize_weak
from qbcharge.thermo import Hamiltonian, energy, free_energy, thermal_free_energy
from qbcharge.channel import channel_output

QUBIT = Hamiltonian([0, 1])


def test_condition_margins_are_in_headline_units():
    c = verify._Conditions(2e-3)
    c.le("tight", 1.0, 1.0, 1e-6)
    c.le("loose", 1.0, 1.0 + 1e-3, 2e-3)
    c.le("broken", 1.0 + 2e-6, 1.0, 1e-6)
    assert c.items["tight"] == 0.0
    assert c.items["loose"] == pytest.approx(1e-3)
    # violated by twice its own tolerance -> twice the headline below zero
    assert c.items["broken"] == pytest.approx(-4e-3)
    assert c.margin == c.items["broken"]


def test_report_failure_count_matches_margins():
    rep = verify.check_thm2(4, seed=11)
    assert rep.failures == sum(d["margin"] < -rep.tolerance for d in rep.details)
    assert rep.worst_margin == min(d["margin"] for d in rep.details)
    assert [d["index"] for d in rep.details] == [0, 1, 2, 3]


def test_checks_are_deterministic_and_independent_of_workers():
    a = verify.check_thm2(3, seed=5)
    b = verify.check_thm2(3, seed=5)
    c = verify.check_thm2(3, seed=5, workers=2)
    assert a == b == c


def test_instances_replay_from_recorded_inputs():
    rep = verify.check_prop1(2, seed=3)
    for d in rep.details:
        inp = d["inputs"]
        alpha = complex(*inp["alpha"])
        phase = complex(*inp["gamma_phase"])
        battery = np.array([[complex(*z) for z in row] for row in inp["battery"]])
        inst = verify.Instance(alpha, inp["beta"], phase, battery, inp["pure"], inp["optimizer_seed"])
        g = assistance_gap(inst.extension(), inst.rho(), verify._cfg(inst, verify.VERIFY_OPTIMIZER))
        assert g.weak.value_raw == d["values"]["w_weak"]
        assert g.strong.value_raw == d["values"]["w_strong"]


def test_battery_selector():
    assert all(d["inputs"]["pure"] for d in verify.check_thm1(2, 1, battery="pure").details)
    assert not any(d["inputs"]["pure"] for d in verify.check_thm2(2, 1, battery="mixed").details)
    with pytest.raises(ValueError):
        verify.check_thm2(2, 1, battery="thermal")
    with pytest.raises(ValueError):
        verify.check_thm2(0, 1)


def test_prop1_local_unitary_instance_is_tight(rng):
    ext = IsometricExtension(local_energy_preserving_unitary(QUBIT, QUBIT, seed=8), 0.7)
    rho = random_density(2, rng)
    g = assistance_gap(ext, rho, verify.VERIFY_OPTIMIZER)
    f = free_energy(channel_output(ext, rho), QUBIT, 0.7)
    assert abs(g.weak.value_raw - f) <= 1e-6
    assert abs(g.strong.value_raw - g.weak.value_raw) <= 1e-6


def test_prop1_alpha_one_pure_instance_saturates_last_three(rng):
    ext = qubit_isometry(1.0, 1.4)
    psi = random_pure(2, rng).to_density()
    g = assistance_gap(ext, psi, verify.VERIFY_OPTIMIZER)
    e = energy(channel_output(ext, psi), QUBIT)
    assert abs(g.weak.value_raw - e) <= 1e-6
    assert abs(g.strong.value_raw - e) <= 1e-6


def test_thm1_alpha_zero_pure_reduces_to_thermal_free_energy(rng):
    ext = qubit_isometry(0.0, 2.0)
    w = optimize_weak(ext, random_pure(2, rng).to_density(), verify.VERIFY_OPTIMIZER).value_raw
    assert w == pytest.approx(thermal_free_energy(QUBIT, 2.0), abs=1e-6)


def test_small_suites_pass():
    for name in ("prop1", "thm1", "thm2", "thm3", "case1"):
        rep = verify.CHECKS[name](4, 9)
        assert rep.passed, (name, rep.details)


def test_case1_examples_and_negative_control():
    plus = StateVector(np.array([1, 1]) / np.sqrt(2))
    assert verify.factorization_distance(0.0, 1.0, plus) <= 1e-9
    assert verify.factorization_distance(0.0, 1.0, StateVector.basis(0, 2)) <= 1e-9
    assert verify.factorization_distance(0.3, 1.0, plus) > 0.01
    rep = verify.check_case1_factorization(seed=1, n=3)
    assert rep.passed and "control_distance>0.01" in rep.details[0]["conditions"]


def test_run_suite_rejects_unknown_names():
    with pytest.raises(KeyError):
        verify.run_suite(["prop1", "lemma9"], 1, 0)
