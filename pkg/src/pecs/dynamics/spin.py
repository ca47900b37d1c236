"""Spin-1 mixing in a magnetic field.

``H = g muB B.S + D (Sz^2 - 2/3)`` in the ``(m0, m+, m-)`` basis with the
field in the x-z plane at ``angle`` from the defect (z) axis. Transition
rates defined for bare ``m_S`` sublevels are redistributed onto field
eigenstates with the squared overlaps ``O[n, m] = |<psi_n|m>|^2``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..errors import DomainError

MU_B_MHZ_PER_G = 1.39962449  # Bohr magneton / h
SUBLEVELS = ("0", "+", "-")

_R2 = np.sqrt(2.0)
# spin-1 operators in the (m0, m+, m-) basis
SZ = np.diag([0.0, 1.0, -1.0]).astype(complex)
SX = np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], dtype=complex) / _R2
SY = np.array([[0, -1j, 1j], [1j, 0, 0], [-1j, 0, 0]], dtype=complex) / _R2


@dataclass(frozen=True)
class SpinParams:
    """Isotropic g-factor, zero-field splitting ``D`` (MHz) and field (gauss, degrees)."""

    g_factor: float = 2.0
    D: float = 1000.0
    b_amplitude: float = 0.0
    b_angle: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.D):
            raise DomainError("D must be real and finite")
        if not self.b_amplitude >= 0:
            raise DomainError("field amplitude must be >= 0")
        if not 0.0 <= self.b_angle <= 180.0:
            raise DomainError("field angle must lie in [0, 180] degrees")

    @property
    def field_vector(self) -> np.ndarray:
        th = np.deg2rad(self.b_angle)
        return self.b_amplitude * np.array([np.sin(th), 0.0, np.cos(th)])


def hamiltonian(spin: SpinParams) -> np.ndarray:
    """Spin Hamiltonian in MHz."""
    bx, by, bz = spin.field_vector
    zeeman = spin.g_factor * MU_B_MHZ_PER_G * (bx * SX + by * SY + bz * SZ)
    H = zeeman + spin.D * (SZ @ SZ - (2.0 / 3.0) * np.eye(3))
    assert np.allclose(H, H.conj().T, atol=1e-12 * max(1.0, np.abs(H).max())), "H must be Hermitian"
    return H


def eigenbasis(spin: SpinParams):
    """Energies (MHz) and eigenvectors (columns), labelled by their dominant sublevel.

    Column ``n`` is the eigenstate assigned to bare sublevel ``SUBLEVELS[n]``.
    When ``Sz`` commutes with ``H`` (no field, or field along the axis) the
    bare basis itself is returned.
    """
    H = hamiltonian(spin)
    if np.allclose(H @ SZ, SZ @ H, atol=1e-12 * max(1.0, np.abs(H).max())):
        return np.real(np.diag(H)).copy(), np.eye(3, dtype=complex)
    energies, vecs = np.linalg.eigh(H)
    weight = np.abs(vecs) ** 2  # weight[m, n] = |<m|psi_n>|^2
    rows, cols = linear_sum_assignment(-weight)
    order = cols[np.argsort(rows)]
    return energies[order], vecs[:, order]


def overlap_matrix(spin: SpinParams) -> np.ndarray:
    """``O[n, m] = |<psi_n|m>|^2``; doubly stochastic."""
    _, vecs = eigenbasis(spin)
    return (np.abs(vecs) ** 2).T


def manifold_overlap(upper: SpinParams, lower: SpinParams) -> np.ndarray:
    """``W[j, i] = |<upper_j|lower_i>|^2`` between the eigenstates of two manifolds."""
    _, vu = eigenbasis(upper)
    _, vl = eigenbasis(lower)
    return np.abs(vu.conj().T @ vl) ** 2


def spin_mixing(spin: SpinParams, zero_field_rates) -> np.ndarray:
    """Redistribute sublevel rates onto field eigenstates.

    ``zero_field_rates`` is a length-3 sequence or a mapping keyed by
    ``"0", "+", "-"``; the result is ordered the same way, eigenstate ``n``
    receiving ``sum_m O[n, m] k_m``.
    """
    if isinstance(zero_field_rates, dict):
        k = np.array([float(zero_field_rates[s]) for s in SUBLEVELS])
    else:
        k = np.asarray(zero_field_rates, dtype=float).reshape(-1)
    if k.size != 3:
        raise DomainError("spin mixing needs three sublevel rates (m0, m+, m-)")
    return overlap_matrix(spin) @ k
