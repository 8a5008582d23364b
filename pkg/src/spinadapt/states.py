"""Density matrices and the state functionals used throughout the package.

A density matrix is a Hermitian, unit-trace, positive-semidefinite complex
matrix.  The simulation engine works on plain ``numpy`` arrays for speed;
``DensityMatrix`` is the validated value type used at API boundaries
(initial states, equilibrium projectors, user input).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .tolerances import ALGEBRAIC_ATOL, RADICAND_ATOL, SPECTRAL_ATOL

if TYPE_CHECKING:
    from .operators import AngularMomentumOps


class InvalidStateError(ValueError):
    """A matrix violates a density-matrix invariant."""


def as_matrix(rho) -> np.ndarray:
    """Return the underlying complex matrix of a state-like object."""
    if isinstance(rho, DensityMatrix):
        return rho.matrix
    return np.asarray(rho, dtype=complex)


def hermiticity_defect(mat: np.ndarray) -> float:
    """Largest entrywise deviation of ``mat`` from its conjugate transpose."""
    return float(np.abs(mat - mat.conj().T).max())


def min_eigenvalue(mat: np.ndarray) -> float:
    """Smallest eigenvalue of a (numerically) Hermitian matrix.

    Computed with a Hermitian eigensolver so the sign of small negative
    slack is meaningful.
    """
    return float(np.linalg.eigvalsh(mat)[0])


@dataclass(frozen=True)
class DensityMatrix:
    """Validated quantum state.

    Construction checks Hermiticity (within ``ALGEBRAIC_ATOL``), unit trace
    (within ``ALGEBRAIC_ATOL``) and positive semidefiniteness (smallest
    eigenvalue >= -``SPECTRAL_ATOL``), and freezes the matrix.
    """

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=complex)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise InvalidStateError(f"expected a square matrix, got shape {mat.shape}")
        if mat.shape[0] < 2:
            raise InvalidStateError("density matrices must have dimension >= 2")
        if not np.all(np.isfinite(mat.view(float))):
            raise InvalidStateError("matrix contains non-finite entries")
        defect = hermiticity_defect(mat)
        if defect > ALGEBRAIC_ATOL:
            raise InvalidStateError(f"matrix is not Hermitian (defect {defect:.3e})")
        tr = mat.trace()
        if abs(tr - 1.0) > ALGEBRAIC_ATOL:
            raise InvalidStateError(f"trace is {tr}, expected 1")
        smallest = min_eigenvalue(mat)
        if smallest < -SPECTRAL_ATOL:
            raise InvalidStateError(f"matrix has negative eigenvalue {smallest:.3e}")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.matrix
        return self.matrix.astype(dtype)

    @classmethod
    def maximally_mixed(cls, dim: int) -> "DensityMatrix":
        return cls(np.eye(dim, dtype=complex) / dim)

    @classmethod
    def random_hs(cls, dim: int, rng: np.random.Generator) -> "DensityMatrix":
        """Random full-rank state: G G* / Tr[G G*] with i.i.d. complex normal G."""
        g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
        mat = g @ g.conj().T
        return cls(mat / mat.trace().real)


def _check_dims(mat: np.ndarray, ops: "AngularMomentumOps") -> None:
    if mat.shape[0] != ops.dim:
        raise ValueError(f"state dimension {mat.shape[0]} does not match operators ({ops.dim})")


def jz_mean(rho, ops: "AngularMomentumOps") -> float:
    """Expectation Tr[J_z rho]; lies in [-J, J]."""
    mat = as_matrix(rho)
    _check_dims(mat, ops)
    return float(np.real(np.diagonal(mat)) @ ops.jz_diag)


def jz_variance(rho, ops: "AngularMomentumOps") -> float:
    """Variance Tr[J_z^2 rho] - Tr[J_z rho]^2; zero exactly on J_z eigenprojectors."""
    mat = as_matrix(rho)
    _check_dims(mat, ops)
    diag = np.real(np.diagonal(mat))
    mean = diag @ ops.jz_diag
    return float(diag @ ops.jz_diag**2 - mean * mean)


def _bures_term(fidelity: float) -> float:
    radicand = 2.0 - 2.0 * np.sqrt(max(fidelity, 0.0))
    if radicand < -RADICAND_ATOL:
        raise InvalidStateError(
            f"Bures radicand {radicand:.3e} is negative beyond tolerance; "
            "the state overlaps its target with fidelity > 1"
        )
    return float(np.sqrt(max(radicand, 0.0)))


def bures_distance(rho, rho_hat, n: int, m: int, ops: "AngularMomentumOps") -> float:
    """Summed Bures distance of (rho, rho_hat) to the projector pair (rho_n, rho_m).

    Returns sqrt(2 - 2 sqrt(Tr[rho rho_n])) + sqrt(2 - 2 sqrt(Tr[rho_hat rho_m])).
    Fidelities slightly below 0 or radicands within ``RADICAND_ATOL`` of 0 are
    clamped; anything worse signals an invalid state and raises.
    """
    mat = as_matrix(rho)
    mat_hat = as_matrix(rho_hat)
    _check_dims(mat, ops)
    _check_dims(mat_hat, ops)
    if not (0 <= n < ops.dim and 0 <= m < ops.dim):
        raise ValueError(f"target indices ({n}, {m}) out of range for dimension {ops.dim}")
    # The targets are basis projectors, so each fidelity is a diagonal entry.
    return _bures_term(mat[n, n].real) + _bures_term(mat_hat[m, m].real)


def trace_norm_distance(a, b) -> float:
    """Trace norm Tr|a - b|; at most 2 for a pair of density matrices."""
    mat_a = as_matrix(a)
    mat_b = as_matrix(b)
    if mat_a.shape != mat_b.shape:
        raise ValueError(f"shape mismatch: {mat_a.shape} vs {mat_b.shape}")
    return float(np.abs(np.linalg.eigvalsh(mat_a - mat_b)).sum())
