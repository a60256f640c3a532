"""Energy-preserving joint unitaries and isometric extensions of thermal operations."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import thermo
from .qcore import (
    DensityOperator,
    DimensionError,
    StateVector,
    haar_unitary,
    partial_trace,
)
from .thermo import Beta, Hamiltonian

DEGENERACY_TOL = 1e-9
COMMUTATOR_TOL = 1e-9


@dataclass(frozen=True)
class Block:
    energy: float
    indices: tuple[int, ...]


def degenerate_blocks(hs: Hamiltonian, hb: Hamiltonian, tol: float = DEGENERACY_TOL) -> list[Block]:
    """Group product-basis indices ``i*d_b + k`` by total energy E_i + E_k.

    Levels are scanned in increasing energy and a new group starts whenever the
    gap to the previous level exceeds ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    total = np.add.outer(hs.energies, hb.energies).reshape(-1)
    order = np.argsort(total, kind="stable")
    groups: list[list[int]] = []
    last = None
    for idx in order:
        if last is None or total[idx] - last > tol:
            groups.append([])
        groups[-1].append(int(idx))
        last = total[idx]
    return [Block(float(np.mean(total[g])), tuple(sorted(g))) for g in groups]


def _total_hamiltonian(hs: Hamiltonian, hb: Hamiltonian) -> np.ndarray:
    return np.diag(np.add.outer(hs.energies, hb.energies).reshape(-1))


class EnergyPreservingUnitary:
    """Unitary on H_s (x) H_b that commutes with H_s (x) I + I (x) H_b."""

    def __init__(self, matrix, hs: Hamiltonian, hb: Hamiltonian,
                 blocks: Sequence[Block] | None = None):
        u = np.array(matrix, dtype=complex)
        d = hs.dim * hb.dim
        if u.shape != (d, d):
            raise DimensionError(f"unitary shape {u.shape} does not match {d}x{d}")
        dev = np.abs(u.conj().T @ u - np.eye(d)).max()
        if dev > 1e-10:
            raise ValueError(f"matrix is not unitary (deviation {dev:.2e})")
        h = _total_hamiltonian(hs, hb)
        comm = float(np.abs(u @ h - h @ u).max())
        if comm > COMMUTATOR_TOL:
            raise ValueError(f"unitary does not preserve total energy (commutator {comm:.2e})")
        u.setflags(write=False)
        self.matrix = u
        self.hs = hs
        self.hb = hb
        self.block_structure = list(blocks) if blocks is not None else degenerate_blocks(hs, hb)
        self.commutator_norm = comm

    @property
    def dims(self) -> tuple[int, int]:
        return (self.hs.dim, self.hb.dim)


def random_energy_preserving_unitary(hs: Hamiltonian, hb: Hamiltonian, seed: int,
                                     blocks: Sequence[Block] | None = None) -> EnergyPreservingUnitary:
    """Block-diagonal unitary with an independent Haar block on each degenerate subspace."""
    blocks = degenerate_blocks(hs, hb) if blocks is None else list(blocks)
    rng = np.random.default_rng(seed)
    d = hs.dim * hb.dim
    u = np.zeros((d, d), dtype=complex)
    for blk in blocks:
        idx = np.array(blk.indices)
        u[np.ix_(idx, idx)] = haar_unitary(idx.size, rng)
    return EnergyPreservingUnitary(u, hs, hb, blocks)


def _local_block_unitary(h: Hamiltonian, rng: np.random.Generator) -> np.ndarray:
    u = np.zeros((h.dim, h.dim), dtype=complex)
    start = 0
    while start < h.dim:
        stop = start + 1
        while stop < h.dim and h.energies[stop] - h.energies[stop - 1] <= DEGENERACY_TOL:
            stop += 1
        u[start:stop, start:stop] = haar_unitary(stop - start, rng)
        start = stop
    return u


def local_energy_preserving_unitary(hs: Hamiltonian, hb: Hamiltonian, seed: int) -> EnergyPreservingUnitary:
    """U_s (x) U_b with each factor commuting with its own Hamiltonian."""
    rng = np.random.default_rng(seed)
    return EnergyPreservingUnitary(
        np.kron(_local_block_unitary(hs, rng), _local_block_unitary(hb, rng)), hs, hb
    )


class IsometricExtension:
    """V|psi> = (U_sb (x) I_R)(|psi>_s (x) |phi_beta>_bR), a map H_s -> H_s (x) H_b (x) H_R."""

    def __init__(self, unitary: EnergyPreservingUnitary, beta: Beta,
                 bath_purification: StateVector | None = None):
        self.unitary = unitary
        self.beta = thermo.check_beta(beta)
        if bath_purification is None:
            bath_purification = thermo.purified_thermal(unitary.hb, beta)
        db = unitary.hb.dim
        if bath_purification.dims[0] != db:
            raise DimensionError("bath purification does not match the bath dimension")
        self.bath_purification = bath_purification
        self.isometry = self._build_isometry()
        dev = np.abs(self.isometry.conj().T @ self.isometry - np.eye(self.ds)).max()
        if dev > 1e-10:
            raise ValueError(f"extension is not an isometry (deviation {dev:.2e})")

    @property
    def hs(self) -> Hamiltonian:
        return self.unitary.hs

    @property
    def hb(self) -> Hamiltonian:
        return self.unitary.hb

    @property
    def ds(self) -> int:
        return self.unitary.hs.dim

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.ds, self.unitary.hb.dim, self.bath_purification.dims[1])

    def _build_isometry(self) -> np.ndarray:
        ds, db, dr = self.ds, self.unitary.hb.dim, self.bath_purification.dims[1]
        phi = self.bath_purification.amplitudes.reshape(db, dr)
        # column j: |j>_s (x) phi, then U on the first two factors
        cols = np.einsum("js,br->sbrj", np.eye(ds), phi).reshape(ds * db, dr * ds)
        out = self.unitary.matrix @ cols
        return out.reshape(ds * db * dr, ds)

    def apply_pure(self, psi: StateVector) -> StateVector:
        if psi.amplitudes.size != self.ds:
            raise DimensionError("battery dimension mismatch")
        return StateVector(self.isometry @ psi.amplitudes, self.dims, tol=1e-9)


def qubit_isometry(alpha: complex, beta: Beta, phase_gamma: complex = 1.0) -> IsometricExtension:
    """Two-level family with H_s = H_b = diag(0, 1).

    The unitary fixes |00> and |11> and acts on span{|01>, |10>} as
    |01> -> alpha|01> + gamma|10>, |10> -> conj(gamma)|01> - conj(alpha)|10>,
    where gamma = sqrt(1 - |alpha|^2) * phase_gamma.
    """
    alpha = complex(alpha)
    phase_gamma = complex(phase_gamma)
    if abs(abs(phase_gamma) - 1.0) > 1e-10:
        raise ValueError("phase_gamma must have unit modulus")
    excess = abs(alpha) ** 2 - 1.0
    if excess > 1e-10:
        raise ValueError(f"|alpha|^2 + |gamma|^2 = 1 cannot hold with |alpha| = {abs(alpha)}")
    gamma = np.sqrt(max(0.0, -excess)) * phase_gamma
    u = np.eye(4, dtype=complex)
    u[1, 1], u[2, 1] = alpha, gamma
    u[1, 2], u[2, 2] = np.conj(gamma), -np.conj(alpha)
    h = Hamiltonian([0.0, 1.0])
    return IsometricExtension(EnergyPreservingUnitary(u, h, h), beta)


def apply_extension(ext: IsometricExtension, rho: DensityOperator) -> DensityOperator:
    """Joint battery-bath-reference state V rho V^dagger with dims (d_s, d_b, d_R)."""
    if rho.dim != ext.ds:
        raise DimensionError(f"battery dimension {rho.dim} does not match extension {ext.ds}")
    v = ext.isometry
    return DensityOperator(v @ rho.matrix @ v.conj().T, ext.dims, tol=1e-9)


def channel_output(ext: IsometricExtension, rho: DensityOperator) -> DensityOperator:
    """Lambda_beta(rho): the battery marginal of the joint state."""
    return partial_trace(apply_extension(ext, rho), [0])
