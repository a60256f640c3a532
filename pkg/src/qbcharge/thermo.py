"""Hamiltonians, Gibbs states, their purifications and free-energy accounting."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .qcore import DensityOperator, DimensionError, StateVector, vn_entropy


class UnsupportedConfigurationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    """Diagonal Hamiltonian; energies are stored in nondecreasing order.

    ``permutation[i]`` is the position in the caller's list of the level now
    stored at index ``i``.
    """

    energies: np.ndarray
    permutation: tuple[int, ...]

    def __init__(self, energies: Sequence[float]):
        e = np.asarray(energies, dtype=float).reshape(-1)
        if e.size < 2:
            raise ValueError("a Hamiltonian needs at least two levels")
        if not np.all(np.isfinite(e)):
            raise ValueError("energies must be finite")
        perm = np.argsort(e, kind="stable")
        e = e[perm]
        e.setflags(write=False)
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "permutation", tuple(int(p) for p in perm))

    @property
    def dim(self) -> int:
        return self.energies.size

    def matrix(self) -> np.ndarray:
        return np.diag(self.energies).astype(complex)

    def ground_degeneracy(self, tol: float = 1e-9) -> int:
        return int(np.sum(self.energies - self.energies[0] <= tol))

    def __repr__(self) -> str:
        return f"Hamiltonian({list(self.energies)})"


INFINITE = math.inf

Beta = Union[float, int]


def check_beta(beta: Beta) -> float:
    b = float(beta)
    if math.isnan(b) or b < 0:
        raise ValueError(f"inverse temperature must be >= 0 or INFINITE, got {beta!r}")
    return b


def inverse_beta(beta: Beta) -> float:
    """Temperature 1/beta, zero at absolute zero; beta = 0 is rejected."""
    b = check_beta(beta)
    if b == 0:
        raise ZeroDivisionError("free energy is undefined at beta = 0")
    return 0.0 if math.isinf(b) else 1.0 / b


def boltzmann_weights(h: Hamiltonian, beta: Beta) -> np.ndarray:
    b = check_beta(beta)
    shifted = h.energies - h.energies[0]
    if math.isinf(b):
        w = (shifted <= 1e-9).astype(float)
    else:
        w = np.exp(-b * shifted)
    return w / w.sum()


def partition_function(h: Hamiltonian, beta: Beta) -> float:
    b = check_beta(beta)
    if math.isinf(b):
        raise ValueError("partition function diverges/vanishes at zero temperature")
    return float(np.sum(np.exp(-b * h.energies)))


def thermal_state(h: Hamiltonian, beta: Beta) -> DensityOperator:
    return DensityOperator(np.diag(boltzmann_weights(h, beta)), (h.dim,))


def purified_thermal(h: Hamiltonian, beta: Beta) -> StateVector:
    """sum_k sqrt(p_k) |E_k>_b |E_k>_R with p the Gibbs weights; dims (d, d)."""
    if math.isinf(check_beta(beta)) and h.ground_degeneracy() > 1:
        raise UnsupportedConfigurationError(
            "zero-temperature purification needs a non-degenerate ground level"
        )
    p = boltzmann_weights(h, beta)
    d = h.dim
    amp = np.zeros(d * d, dtype=complex)
    amp[np.arange(d) * (d + 1)] = np.sqrt(p)
    return StateVector(amp, (d, d))


def energy(rho: DensityOperator, h: Hamiltonian) -> float:
    if rho.dim != h.dim:
        raise DimensionError(f"state dimension {rho.dim} does not match Hamiltonian {h.dim}")
    return float(np.real(np.diagonal(rho.matrix)) @ h.energies)


def free_energy(rho: DensityOperator, h: Hamiltonian, beta: Beta, rescaled: bool = False) -> float:
    """Tr(H rho) - S(rho)/beta, optionally shifted so the Gibbs state sits at zero."""
    t = inverse_beta(beta)
    f = energy(rho, h) - t * vn_entropy(rho)
    if rescaled:
        f -= thermal_free_energy(h, beta)
    return f


def thermal_free_energy(h: Hamiltonian, beta: Beta) -> float:
    tau = thermal_state(h, beta)
    return energy(tau, h) - inverse_beta(beta) * vn_entropy(tau)
