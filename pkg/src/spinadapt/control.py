"""Control inputs and robust-stabilization bounds.

The stabilizing-controller existence result gives, for each target level
n_bar, an interval (1 + alpha, 1 + beta) of coupling ratios
theta_hat / theta inside which a stabilizing feedback exists.  The control
applied in experiments is the sum of a vanishing feedforward excitation
f(t)^2 (which keeps the filter away from wrong equilibria while the
parameter is still being learned) and the quadratic state feedback
gain_fb * (1 - Tr[rho_hat rho_target])^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .states import as_matrix, jz_mean, jz_variance

if TYPE_CHECKING:
    from .operators import AngularMomentumOps
    from .params import GainSchedule


@dataclass(frozen=True)
class RobustBounds:
    """Ratio interval (1 + alpha, 1 + beta) for target level ``n_bar``.

    ``L`` is the combinatorial factor 4 |J - n_bar| max(n_bar, 2J - n_bar)
    and is populated only for targets away from the extremal and central
    levels.
    """

    n_bar: int
    alpha: float
    beta: float
    L: int | None = None

    @property
    def interval(self) -> tuple[float, float]:
        return (1.0 + self.alpha, 1.0 + self.beta)


def robust_bounds(n_levels: int, n_bar: int) -> RobustBounds:
    """Bounds on the tolerable ratio error for stabilizing level ``n_bar``.

    Cases: extremal targets (n_bar = 0 or 2J), the central target
    (n_bar = J, integer spin only), and all others via the factor L.
    """
    if n_levels < 2:
        raise ValueError(f"n_levels must be >= 2, got {n_levels}")
    if not 0 <= n_bar <= n_levels - 1:
        raise ValueError(f"target index {n_bar} out of range for {n_levels} levels")
    spin = 0.5 * (n_levels - 1)

    if n_bar == 0 or n_bar == n_levels - 1:
        alpha = -1.0 / (2 * n_levels - 1)
        beta = 0.5 * (math.sqrt((n_levels + 1) / (n_levels - 1)) - 1.0)
        return RobustBounds(n_bar=n_bar, alpha=alpha, beta=beta)

    if n_bar == spin:
        if n_levels == 2:
            raise ValueError("central target is degenerate for a two-level system")
        return RobustBounds(n_bar=n_bar, alpha=-1.0 / (n_levels - 2), beta=1.0 / (n_levels - 2))

    L = 4 * abs(spin - n_bar) * max(n_bar, 2 * spin - n_bar)
    L = int(round(L))
    return RobustBounds(n_bar=n_bar, alpha=-1.0 / (L + 1), beta=1.0 / (L - 1), L=L)


def condition_holds(theta_hat: float, theta: float, bounds: RobustBounds) -> bool:
    """True iff theta_hat / theta - 1 lies strictly inside (alpha, beta)."""
    if theta <= 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    error = theta_hat / theta - 1.0
    return bounds.alpha < error < bounds.beta


def u_feedback(rho_hat, target, gain_fb: float) -> float:
    """Quadratic state feedback gain_fb * (1 - Tr[rho_hat rho_target])^2."""
    mat = as_matrix(rho_hat)
    tgt = as_matrix(target)
    overlap = float(np.real(np.sum(mat * tgt.T)))
    return gain_fb * (1.0 - overlap) ** 2


def u_feedforward(t: float, gain: "GainSchedule") -> float:
    """Vanishing excitation f(t)^2 = (K t + 1)^(-2p)."""
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    return gain.f(t) ** 2


def delta_functional(rho, rho_hat, theta_hat: float, theta: float, ops: "AngularMomentumOps") -> float:
    """Nonnegativity diagnostic combining J_z variances and estimation errors.

    Returns
        3 V^2 + 2 V V_hat + 3 V_hat^2
        - 2 V_hat (Tr[J_z (rho - rho_hat)] + Tr[J_z rho_hat] (1 - theta_hat / theta))

    where V, V_hat are the J_z variances of rho and rho_hat.  It vanishes
    whenever both states are J_z eigenprojectors; empirical eventual
    nonnegativity along trajectories is the assumption under which local
    convergence of the adaptive scheme is guaranteed.
    """
    if theta <= 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    v = jz_variance(rho, ops)
    v_hat = jz_variance(rho_hat, ops)
    x = jz_mean(rho, ops)
    x_hat = jz_mean(rho_hat, ops)
    quad = 3.0 * v * v + 2.0 * v * v_hat + 3.0 * v_hat * v_hat
    return quad - 2.0 * v_hat * ((x - x_hat) + x_hat * (1.0 - theta_hat / theta))
