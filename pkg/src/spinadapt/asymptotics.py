"""Closed-form statistics of the tuning law at equilibrium starting points.

With the true state pinned at projector n and the filter at projector m
(no control), the record means are the constants x = J - n and
x_hat = J - m, and the estimate follows the linear scalar SDE

    d theta_hat = f(t) x_hat [ (theta x - theta_hat x_hat) dt + dW / 2 ].

Its mean and variance are available in closed form through the running
gain integral F(t); this module evaluates them exactly (adaptive quadrature
for the variance) and also provides an independent brute-force Monte Carlo
of the same scalar SDE, so the matrix-valued trajectory engine can be
validated against analysis rather than against itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.integrate import quad

from .params import GainSchedule


def gain_integral(t: float, gain: GainSchedule) -> float:
    """Running integral F(t) of the learning coefficient f.

    F(t) = ((K t + 1)^(1-p) - 1) / (K (1 - p)) for p != 1, and
    ln(K t + 1) / K for p = 1.  Nondecreasing for p >= 0 with F(0) = 0.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    K, p = gain.K, gain.p
    if p == 1.0:
        return math.log(K * t + 1.0) / K
    return ((K * t + 1.0) ** (1.0 - p) - 1.0) / (K * (1.0 - p))


def _f_at_integral_value(s: float, gain: GainSchedule) -> float:
    """f evaluated at the time where the gain integral equals s (f o F^-1)."""
    K, p = gain.K, gain.p
    if p == 1.0:
        return math.exp(-K * s)
    return (1.0 + K * (1.0 - p) * s) ** (-p / (1.0 - p))


@dataclass(frozen=True)
class EquilibriumScenario:
    """Equilibrium starting pair (rho_n, rho_m) with m != J, no control."""

    spin: float
    n: int
    m: int
    theta: float
    theta_hat0: float
    gain: GainSchedule

    def __post_init__(self):
        top = int(round(2 * self.spin))
        if 2 * self.spin != top or self.spin <= 0:
            raise ValueError(f"spin must be a positive half-integer, got {self.spin}")
        if not 0 <= self.n <= top:
            raise ValueError(f"n={self.n} out of range 0..{top}")
        if not 0 <= self.m <= top:
            raise ValueError(f"m={self.m} out of range 0..{top}")
        if self.m == self.spin:
            raise ValueError("m must differ from J so the filter mean x_hat is nonzero")
        if self.theta <= 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")

    @property
    def x(self) -> float:
        return self.spin - self.n

    @property
    def x_hat(self) -> float:
        return self.spin - self.m


@dataclass(frozen=True)
class Asymptote:
    """A long-time value together with how to read it.

    ``kind`` is "limit" for a true limit (possibly infinite),
    "upper-bound" when only lim sup control is available, and
    "depends-on-initial" when the limit exists but retains a
    theta_hat(0)-dependent component (p > 1, where F(inf) is finite).
    """

    value: float
    kind: Literal["limit", "upper-bound", "depends-on-initial"]


def mean_limit(scenario: EquilibriumScenario) -> Asymptote:
    """Long-time mean of the estimate.

    For p <= 1 the gain integral diverges and the mean converges to
    theta x / x_hat = theta (J - n) / (J - m) regardless of the start.  For
    p > 1, F(inf) = 1 / (K (p - 1)) is finite and the linear-SDE solution
    e^(-x_hat^2 F(t)) theta_hat(0) + (1 - e^(-x_hat^2 F(t))) theta x / x_hat
    retains its initial-value term in the limit.
    """
    gain = scenario.gain
    target = scenario.theta * scenario.x / scenario.x_hat
    if gain.p <= 1.0:
        return Asymptote(value=target, kind="limit")
    f_inf = 1.0 / (gain.K * (gain.p - 1.0))
    weight = math.exp(-scenario.x_hat**2 * f_inf)
    return Asymptote(value=weight * scenario.theta_hat0 + (1.0 - weight) * target,
                     kind="depends-on-initial")


def variance_exact(t: float, scenario: EquilibriumScenario) -> float:
    """Variance of the estimate at time t for a deterministic start.

    Evaluates (x_hat^2 / 4) * integral_0^t e^(-2 x_hat^2 (F(t) - F(tau))) f(tau)^2 dtau
    by substituting s = F(t) - F(tau), which turns the integrand into the
    overflow-free product e^(-2 x_hat^2 s) * f(F^-1(F(t) - s)).
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if t == 0:
        return 0.0
    gain = scenario.gain
    x_hat_sq = scenario.x_hat**2
    rate = 2.0 * x_hat_sq
    f_total = gain_integral(t, gain)

    def integrand(s: float) -> float:
        return math.exp(-rate * s) * _f_at_integral_value(f_total - s, gain)

    anchors = [scale / rate for scale in (1.0, 5.0, 10.0, 20.0)]
    points = [a for a in anchors if 0.0 < a < f_total] or None
    value, abserr = quad(integrand, 0.0, f_total, points=points,
                         limit=300, epsabs=1e-14, epsrel=1e-10)
    if abserr > max(1e-8 * abs(value), 1e-12):
        raise RuntimeError(
            f"variance quadrature did not converge (value {value:.6e}, "
            f"estimated error {abserr:.3e})")
    return 0.25 * x_hat_sq * value


def variance_limit(scenario: EquilibriumScenario) -> Asymptote:
    """Long-time variance: 0 for p in (0, 1], 1/8 at p = 0, infinite for
    p < 0; for p > 1 only the upper bound 1/8 is available."""
    p = scenario.gain.p
    if p > 1.0:
        return Asymptote(value=0.125, kind="upper-bound")
    if p > 0.0:
        return Asymptote(value=0.0, kind="limit")
    if p == 0.0:
        return Asymptote(value=0.125, kind="limit")
    return Asymptote(value=math.inf, kind="limit")


def c_theta(theta_hat: float, theta: float) -> float:
    """Squared relative estimation error (1 - theta_hat / theta)^2."""
    if theta <= 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    return (1.0 - theta_hat / theta) ** 2


def c_x(x: float, x_hat: float) -> float:
    """Squared output mismatch (x - x_hat)^2."""
    return (x - x_hat) ** 2


@dataclass(frozen=True)
class TuningMonteCarlo:
    """Ensemble statistics of the scalar tuning SDE at requested times."""

    times: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    se_mean: np.ndarray
    se_variance: np.ndarray
    n_paths: int


def tuning_monte_carlo(scenario: EquilibriumScenario, times, n_paths: int,
                       dt: float = 0.01, seed: int = 0,
                       floor: float | None = None) -> TuningMonteCarlo:
    """Brute-force Euler-Maruyama ensemble of the scalar tuning SDE.

    Uses the same step width as the trajectory engine so the comparison with
    ``variance_exact``/``mean_limit`` carries over to the full simulation.
    Standard errors are sqrt(var/n) for the mean and var * sqrt(2/(n-1)) for
    the variance (normal theory).
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if n_paths < 2:
        raise ValueError(f"n_paths must be >= 2, got {n_paths}")
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0):
        raise ValueError("times must be >= 0")
    order = np.argsort(times)
    steps = np.round(times / dt).astype(int)
    record_at = {int(steps[i]): i for i in order}
    n_steps = int(steps.max())

    gain = scenario.gain
    x, x_hat = scenario.x, scenario.x_hat
    theta = scenario.theta
    rng = np.random.default_rng(seed)
    paths = np.full(n_paths, float(scenario.theta_hat0))
    sqrt_dt = math.sqrt(dt)

    mean = np.empty(len(times))
    variance = np.empty(len(times))

    def snapshot(k: int):
        i = record_at.get(k)
        if i is not None:
            mean[i] = paths.mean()
            variance[i] = paths.var(ddof=1)

    snapshot(0)
    drift_mean = 2.0 * theta * x * dt
    for k in range(n_steps):
        f_k = gain.f(k * dt)
        dy = drift_mean + sqrt_dt * rng.standard_normal(n_paths)
        paths += f_k * (-x_hat * x_hat * paths * dt + 0.5 * x_hat * dy)
        if floor is not None:
            np.maximum(paths, floor, out=paths)
        snapshot(k + 1)

    se_mean = np.sqrt(variance / n_paths)
    se_variance = variance * math.sqrt(2.0 / (n_paths - 1))
    return TuningMonteCarlo(times=times, mean=mean, variance=variance,
                            se_mean=se_mean, se_variance=se_variance,
                            n_paths=n_paths)
