"""Parameter records for the measured system, the filter model, and the
learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class SystemParams:
    """Physical parameters (omega, M, eta) of the measured system.

    ``theta = sqrt(eta * M)`` is the composite coupling whose accurate
    estimation suffices for robust stabilization; it is derived once at
    construction.
    """

    omega: float
    M: float
    eta: float
    theta: float = field(init=False)

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError(f"omega must be > 0, got {self.omega}")
        if self.M <= 0:
            raise ValueError(f"M must be > 0, got {self.M}")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must be in (0, 1], got {self.eta}")
        object.__setattr__(self, "theta", math.sqrt(self.eta * self.M))


@dataclass(frozen=True)
class FilterParams:
    """Nominal model parameters (omega_hat, M_hat(0), eta_hat).

    Only the coupling M_hat is tuned online; omega_hat and eta_hat stay
    fixed.  ``theta0 = sqrt(eta_hat * M_hat0)`` seeds the tuned estimate.
    """

    omega_hat: float
    M_hat0: float
    eta_hat: float
    theta0: float = field(init=False)

    def __post_init__(self):
        if self.omega_hat <= 0:
            raise ValueError(f"omega_hat must be > 0, got {self.omega_hat}")
        if self.M_hat0 <= 0:
            raise ValueError(f"M_hat0 must be > 0, got {self.M_hat0}")
        if not 0 < self.eta_hat <= 1:
            raise ValueError(f"eta_hat must be in (0, 1], got {self.eta_hat}")
        object.__setattr__(self, "theta0", math.sqrt(self.eta_hat * self.M_hat0))


@dataclass(frozen=True)
class GainSchedule:
    """Decaying learning coefficient f(t) = (K t + 1)^(-p).

    K must be positive.  The exponent p is deliberately unrestricted here so
    that every asymptotic regime (p <= 0, p in (0, 1], p > 1) can be
    exercised; experiment configuration separately warns when p lies outside
    the range (0.5, 1] required by the local-convergence analysis.
    """

    K: float
    p: float

    def __post_init__(self):
        if self.K <= 0:
            raise ValueError(f"K must be > 0, got {self.K}")

    def f(self, t: float) -> float:
        """Learning coefficient at time t >= 0; f(0) = 1."""
        return (self.K * t + 1.0) ** (-self.p)
