"""Angular-momentum operators for an N-level system.

For spin J (N = 2J + 1 levels) the measurement operator J_z is diagonal with
eigenvalues J, J-1, ..., -J, and the control operator J_y is tridiagonal with
couplings c_m = sqrt((2J+1-m) m) / 2 between adjacent levels.  Each basis
projector rho_n (onto the (n+1)-th basis vector) satisfies
J_z rho_n = rho_n J_z = (J - n) rho_n and is an equilibrium of the
uncontrolled measurement dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .states import DensityMatrix


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AngularMomentumOps:
    """Precomputed spin-J operators and equilibrium projectors.

    Immutable after construction; all arrays are read-only views, so a single
    instance can be shared freely across threads and trajectories.
    """

    spin: float
    dim: int
    jz: np.ndarray
    jy: np.ndarray
    jz_sq: np.ndarray
    ladder: np.ndarray
    equilibria: tuple[DensityMatrix, ...]
    # Derived elementwise tables used by the time stepper:
    #   [J_z, X]        = lam_diff * X
    #   [J_z, [J_z, X]] = lam_diff**2 * X
    #   J_z X + X J_z   = lam_sum * X
    jz_diag: np.ndarray = field(repr=False, default=None)
    lam_diff: np.ndarray = field(repr=False, default=None)
    lam_diff_sq: np.ndarray = field(repr=False, default=None)
    lam_sum: np.ndarray = field(repr=False, default=None)

    def eigenvalue(self, n: int) -> float:
        """J_z eigenvalue J - n of the n-th equilibrium projector."""
        return self.spin - n


def build_ops(n_levels: int) -> AngularMomentumOps:
    """Construct the operators for an ``n_levels``-dimensional system.

    Raises ``ValueError`` for ``n_levels < 2``.
    """
    if n_levels < 2:
        raise ValueError(f"n_levels must be >= 2, got {n_levels}")
    spin = 0.5 * (n_levels - 1)

    lam = spin - np.arange(n_levels, dtype=float)
    jz = np.diag(lam)

    m = np.arange(1, n_levels, dtype=float)
    ladder = 0.5 * np.sqrt((2.0 * spin + 1.0 - m) * m)
    jy = np.zeros((n_levels, n_levels), dtype=complex)
    for k in range(n_levels - 1):
        jy[k, k + 1] = -1j * ladder[k]
        jy[k + 1, k] = 1j * ladder[k]

    equilibria = []
    for n in range(n_levels):
        proj = np.zeros((n_levels, n_levels), dtype=complex)
        proj[n, n] = 1.0
        equilibria.append(DensityMatrix(proj))

    return AngularMomentumOps(
        spin=spin,
        dim=n_levels,
        jz=_readonly(jz),
        jy=_readonly(jy),
        jz_sq=_readonly(np.diag(lam**2)),
        ladder=_readonly(ladder),
        equilibria=tuple(equilibria),
        jz_diag=_readonly(lam),
        lam_diff=_readonly(lam[:, None] - lam[None, :]),
        lam_diff_sq=_readonly((lam[:, None] - lam[None, :]) ** 2),
        lam_sum=_readonly(lam[:, None] + lam[None, :]),
    )
