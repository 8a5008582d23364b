"""Euler-Maruyama engine for the coupled measurement/filter/tuning loop.

One time step of width dt advances three quantities driven by a single
measurement record increment dy:

  true state   d rho     = i[H(u), rho] dt - (M/2)[J_z,[J_z, rho]] dt
                           + theta (J_z rho + rho J_z - 2 x rho) dW
  measurement  dy        = 2 theta x dt + dW,            x = Tr[J_z rho]
  filter       d rho_hat = same generator with hatted parameters, innovation
                           dy - 2 theta_hat_f x_hat dt
  tuning       d theta_hat = f(t) (-x_hat^2 theta_hat dt + x_hat dy / 2)

where H(u) = omega J_z + u J_y and theta = sqrt(eta M).  The filter's
coupling coefficient theta_hat_f = sqrt(eta_hat M_hat(t)) is the magnitude
|theta_hat| of the tuned estimate, since M_hat(t) = theta_hat(t)^2 / eta_hat.

After every Euler step the state is projected back onto the physical set:
re-Hermitized, negative eigenvalues clipped to zero, trace renormalized.
The stepper is trace-preserving in exact arithmetic, so the projection is
a minimal floating-point correction rather than a modeling choice.

Ensembles evolve whole batches of trajectories in lockstep numpy arrays.
Trajectory k draws its initial state and all Wiener increments from its own
``default_rng(seed_k)`` stream, so results per trajectory are independent of
batch composition and of how work is split across processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .operators import AngularMomentumOps, build_ops
from .params import GainSchedule, SystemParams


class ProjectionError(RuntimeError):
    """A state update left the recoverable set (non-finite entries)."""


# ---------------------------------------------------------------------------
# Definitional single-state operations
# ---------------------------------------------------------------------------

def drift_true(rho, u: float, params: SystemParams, ops: AngularMomentumOps) -> np.ndarray:
    """Deterministic generator i[H(u), rho] - (M/2)[J_z, [J_z, rho]].

    Traceless and anti-Hermitian-free by construction: multiplying by a real
    dt yields a Hermitian increment.
    """
    mat = np.asarray(rho, dtype=complex)
    if mat.shape[0] != ops.dim:
        raise ValueError(f"state dimension {mat.shape[0]} does not match operators ({ops.dim})")
    out = (1j * params.omega) * (ops.lam_diff * mat) - (0.5 * params.M) * (ops.lam_diff_sq * mat)
    if u != 0.0:
        out += (1j * u) * (ops.jy @ mat - mat @ ops.jy)
    return out


def innovation_gain(rho, theta: float, ops: AngularMomentumOps) -> np.ndarray:
    """Diffusion coefficient theta (J_z rho + rho J_z - 2 Tr[J_z rho] rho)."""
    mat = np.asarray(rho, dtype=complex)
    if mat.shape[0] != ops.dim:
        raise ValueError(f"state dimension {mat.shape[0]} does not match operators ({ops.dim})")
    x = np.real(np.diagonal(mat)) @ ops.jz_diag
    return theta * (ops.lam_sum * mat - (2.0 * x) * mat)


# ---------------------------------------------------------------------------
# Batched kernels (leading axis = trajectory)
# ---------------------------------------------------------------------------

def _jz_mean_batch(rho: np.ndarray, jz_diag: np.ndarray) -> np.ndarray:
    return np.real(np.diagonal(rho, axis1=1, axis2=2)) @ jz_diag


def _project_batch(rho: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hermitize, clip negative eigenvalues, renormalize the trace.

    Returns (projected states, mask of irrecoverable slices).  A Gershgorin
    bound certifies positivity cheaply; the eigendecomposition runs only for
    slices it cannot certify.
    """
    rho = 0.5 * (rho + np.conj(np.swapaxes(rho, 1, 2)))
    finite = np.isfinite(rho).all(axis=(1, 2))
    diag = np.real(np.diagonal(rho, axis1=1, axis2=2))
    row_rest = np.abs(rho).sum(axis=2) - np.abs(diag)
    uncertified = ((diag - row_rest).min(axis=1) < 0.0) & finite
    if np.any(uncertified):
        idx = np.nonzero(uncertified)[0]
        w, v = np.linalg.eigh(rho[idx])
        np.clip(w, 0.0, None, out=w)
        rho[idx] = (v * w[:, None, :]) @ np.conj(np.swapaxes(v, 1, 2))
    trace = np.real(np.diagonal(rho, axis1=1, axis2=2)).sum(axis=1)
    bad = (~finite) | (trace < 0.5)
    if np.any(bad):
        trace = np.where(bad, 1.0, trace)
    rho /= trace[:, None, None]
    return rho, bad


def _evolve_batch(rho, x, u_dt, lin, theta_innovation, ops) -> tuple[np.ndarray, np.ndarray]:
    """Shared Euler-Maruyama update for a batch of states.

    ``lin`` is the dt-scaled elementwise linear generator
    (i omega dt) lam_diff - (M dt / 2) lam_diff_sq, either one (N, N) table
    or a per-trajectory (B, N, N) stack; ``u_dt`` is control times dt and
    ``theta_innovation`` is the coupling coefficient times the innovation
    increment, both shaped (B,).
    """
    update = lin * rho
    if u_dt is not None and np.any(u_dt):
        comm_y = np.matmul(ops.jy, rho) - np.matmul(rho, ops.jy)
        update = update + (1j * u_dt)[:, None, None] * comm_y
    bracket = (ops.lam_sum - (2.0 * x)[:, None, None]) * rho
    out = rho + update + theta_innovation[:, None, None] * bracket
    return _project_batch(out)


# ---------------------------------------------------------------------------
# Public single-step operations
# ---------------------------------------------------------------------------

def step_true(rho, u: float, dW: float, dt: float, params: SystemParams,
              ops: AngularMomentumOps) -> tuple[np.ndarray, float]:
    """Advance the true state one step and emit the record increment dy.

    ``dW`` is a N(0, dt) sample supplied by the caller; the returned
    dy = 2 theta Tr[J_z rho] dt + dW couples the filter and tuning updates
    to the same realization.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    mat = np.asarray(rho, dtype=complex)[None]
    x = _jz_mean_batch(mat, ops.jz_diag)
    dy = 2.0 * params.theta * x[0] * dt + dW
    lin = (1j * params.omega * dt) * ops.lam_diff - (0.5 * params.M * dt) * ops.lam_diff_sq
    out, bad = _evolve_batch(mat, x, np.array([u * dt]), lin,
                             np.array([params.theta * dW]), ops)
    if bad[0]:
        raise ProjectionError("true-state update produced a non-recoverable matrix")
    return out[0], float(dy)


def step_filter(rho_hat, u: float, dy: float, dt: float, eta_hat: float,
                M_hat: float, omega_hat: float, ops: AngularMomentumOps) -> np.ndarray:
    """Advance the filter state one step, driven by the shared record dy."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    mat = np.asarray(rho_hat, dtype=complex)[None]
    theta_f = math.sqrt(eta_hat * M_hat)
    x_hat = _jz_mean_batch(mat, ops.jz_diag)
    innovation = dy - 2.0 * theta_f * x_hat[0] * dt
    lin = (1j * omega_hat * dt) * ops.lam_diff - (0.5 * M_hat * dt) * ops.lam_diff_sq
    out, bad = _evolve_batch(mat, x_hat, np.array([u * dt]), lin,
                             np.array([theta_f * innovation]), ops)
    if bad[0]:
        raise ProjectionError("filter-state update produced a non-recoverable matrix")
    return out[0]


def step_theta(theta_hat: float, x_hat: float, dy: float, dt: float, t: float,
               gain: GainSchedule, floor: float | None = None) -> float:
    """Advance the coupling estimate: d theta_hat = f(t) (-x_hat^2 theta_hat dt + x_hat dy / 2).

    With ``floor`` set, the estimate is clamped from below after the update;
    by default it evolves unclamped, matching the linear analysis of the
    tuning law.  With x_hat = 0 the estimate is unchanged.
    """
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    f_t = gain.f(t)
    out = theta_hat + f_t * (-x_hat * x_hat * theta_hat * dt + 0.5 * x_hat * dy)
    if floor is not None and out < floor:
        out = floor
    return out


# ---------------------------------------------------------------------------
# Coupled stepping and trajectory simulation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimState:
    """Snapshot of the coupled loop: time, both states, current estimate."""

    t: float
    rho: np.ndarray
    rho_hat: np.ndarray
    theta_hat: float


@dataclass(frozen=True)
class StepOutput:
    """Per-step record: measurement increment, control applied, noise used."""

    dy: float
    u: float
    dW: float


def control_input(rho_hat, t: float, config: ExperimentConfig, ops: AngularMomentumOps) -> float:
    """Total control u = gain_fb (1 - Tr[rho_hat rho_target])^2 + f(t)^2."""
    mat = np.asarray(rho_hat, dtype=complex)
    fid = mat[config.n_bar, config.n_bar].real
    u = config.gain_fb * (1.0 - fid) ** 2
    if config.feedforward:
        u += config.gain.f(t) ** 2
    return float(u)


def step_coupled(state: SimState, dW: float, config: ExperimentConfig,
                 ops: AngularMomentumOps) -> tuple[SimState, StepOutput]:
    """Advance the full loop one step: control, true state, filter, estimate.

    All coefficients are evaluated at the left endpoint, so this composition
    of ``step_true``/``step_filter``/``step_theta`` is the reference
    semantics that the batched ensemble engine reproduces.
    """
    dt = config.dt
    fp = config.filter_params
    u = control_input(state.rho_hat, state.t, config, ops)
    x_hat = _jz_mean_batch(np.asarray(state.rho_hat, dtype=complex)[None], ops.jz_diag)[0]
    rho_next, dy = step_true(state.rho, u, dW, dt, config.system, ops)
    m_hat = state.theta_hat**2 / fp.eta_hat
    rho_hat_next = step_filter(state.rho_hat, u, dy, dt, fp.eta_hat, m_hat, fp.omega_hat, ops)
    theta_next = step_theta(state.theta_hat, x_hat, dy, dt, state.t, config.gain,
                            floor=config.theta_floor)
    next_state = SimState(t=state.t + dt, rho=rho_next, rho_hat=rho_hat_next,
                          theta_hat=theta_next)
    return next_state, StepOutput(dy=dy, u=u, dW=dW)


@dataclass(frozen=True)
class TrajectoryRecord:
    """Sampled time series of one realization.

    ``d_b`` is the summed Bures distance of (rho, rho_hat) to the target
    projector pair, ``delta`` the nonnegativity diagnostic, ``c_theta`` the
    squared relative estimation error, and ``fid_true``/``fid_filter`` the
    overlaps with the target projector.
    """

    seed: int
    target: int
    theta: float
    times: np.ndarray
    theta_hat: np.ndarray
    ratio: np.ndarray
    u: np.ndarray
    d_b: np.ndarray
    delta: np.ndarray
    c_theta: np.ndarray
    fid_true: np.ndarray
    fid_filter: np.ndarray

    SERIES = ("theta_hat", "ratio", "u", "d_b", "delta", "c_theta", "fid_true", "fid_filter")


@dataclass(frozen=True)
class TrajectoryFailure:
    """Seed and step index at which a trajectory left the recoverable set."""

    seed: int
    step: int

    def __str__(self):
        return f"seed {self.seed} failed at step {self.step}"


# Wiener increments are drawn in blocks of roughly this many doubles per
# batch to bound memory on long horizons.
_NOISE_BLOCK_DOUBLES = 4_000_000


def _record_indices(n_steps: int, stride: int) -> np.ndarray:
    idx = np.arange(0, n_steps + 1, stride)
    if idx[-1] != n_steps:
        idx = np.append(idx, n_steps)
    return idx


def simulate_batch(config: ExperimentConfig, seeds,
                   output_stride: int | None = None,
                   ) -> tuple[list[TrajectoryRecord], list[TrajectoryFailure]]:
    """Evolve one trajectory per seed, in lockstep, and sample the series.

    Each seed's initial true state (when random) and Wiener increments come
    from ``numpy.random.default_rng(seed)``, so every trajectory is a pure
    function of (config, seed) regardless of batching.  Failed trajectories
    are reported and their record entries are NaN from the failing step on.
    """
    seeds = [int(s) for s in seeds]
    n_traj = len(seeds)
    ops = build_ops(config.n_levels)
    sp = config.system
    fp = config.filter_params
    gain = config.gain
    dt = config.dt
    n_steps = config.n_steps
    stride = config.output_stride if output_stride is None else output_stride
    nb = config.n_bar

    rec_idx = _record_indices(n_steps, stride)
    n_rec = len(rec_idx)
    rec_pos = np.full(n_steps + 2, -1, dtype=int)
    rec_pos[rec_idx] = np.arange(n_rec)

    rngs = [np.random.default_rng(s) for s in seeds]
    dim = ops.dim
    rho = np.empty((n_traj, dim, dim), dtype=complex)
    rho_hat = np.empty((n_traj, dim, dim), dtype=complex)
    for b, rng in enumerate(rngs):
        rho[b] = config.initial_true.realize(ops, rng)
        rho_hat[b] = config.initial_filter.realize(ops, rng)
    theta_hat = np.full(n_traj, fp.theta0)

    failed = np.zeros(n_traj, dtype=bool)
    fail_step = np.full(n_traj, -1, dtype=int)

    series = {name: np.empty((n_traj, n_rec)) for name in TrajectoryRecord.SERIES}
    times = rec_idx * dt

    lam = ops.jz_diag
    lam_sq = lam**2
    theta = sp.theta
    # dt-scaled linear generator of the true system; the filter's varies with
    # M_hat(t) and is assembled per step from these two constant tables.
    lin_true = (1j * sp.omega * dt) * ops.lam_diff - (0.5 * sp.M * dt) * ops.lam_diff_sq
    lin_omega_hat = (1j * fp.omega_hat * dt) * ops.lam_diff
    half_dt_over_eta = 0.5 * dt / fp.eta_hat
    controls_off = config.gain_fb == 0.0 and not config.feedforward
    sqrt_dt = math.sqrt(dt)

    block = max(1, min(n_steps, _NOISE_BLOCK_DOUBLES // max(n_traj, 1)))
    noise = np.empty((n_traj, 0))
    block_start = 0

    def diagnostics(u_now):
        diag = np.real(np.diagonal(rho, axis1=1, axis2=2))
        diag_hat = np.real(np.diagonal(rho_hat, axis1=1, axis2=2))
        x = diag @ lam
        x_hat = diag_hat @ lam
        v = diag @ lam_sq - x * x
        v_hat = diag_hat @ lam_sq - x_hat * x_hat
        fid_true = diag[:, nb]
        fid_filter = diag_hat[:, nb]
        d_b = (np.sqrt(np.maximum(2.0 - 2.0 * np.sqrt(np.maximum(fid_true, 0.0)), 0.0))
               + np.sqrt(np.maximum(2.0 - 2.0 * np.sqrt(np.maximum(fid_filter, 0.0)), 0.0)))
        ratio = theta_hat / theta
        delta = (3.0 * v * v + 2.0 * v * v_hat + 3.0 * v_hat * v_hat
                 - 2.0 * v_hat * ((x - x_hat) + x_hat * (1.0 - ratio)))
        return {"theta_hat": theta_hat.copy(), "ratio": ratio, "u": u_now,
                "d_b": d_b, "delta": delta, "c_theta": (1.0 - ratio) ** 2,
                "fid_true": fid_true.copy(), "fid_filter": fid_filter.copy()}

    for k in range(n_steps + 1):
        t_k = k * dt
        f_k = gain.f(t_k)
        if controls_off:
            u = None
        else:
            fid_filter_now = np.real(rho_hat[:, nb, nb])
            u = config.gain_fb * (1.0 - fid_filter_now) ** 2
            if config.feedforward:
                u = u + f_k * f_k

        pos = rec_pos[k]
        if pos >= 0:
            snap = diagnostics(np.zeros(n_traj) if u is None else u)
            for name, values in snap.items():
                series[name][:, pos] = values
        if k == n_steps:
            break

        j = k - block_start
        if j >= noise.shape[1]:
            block_start = k
            span = min(block, n_steps - k)
            noise = np.empty((n_traj, span))
            for b, rng in enumerate(rngs):
                noise[b] = rng.standard_normal(span)
            noise *= sqrt_dt
            j = 0
        dW = noise[:, j]

        x = _jz_mean_batch(rho, lam)
        x_hat = _jz_mean_batch(rho_hat, lam)
        dy = (2.0 * theta * dt) * x + dW

        u_dt = None if u is None else u * dt
        rho, bad_true = _evolve_batch(rho, x, u_dt, lin_true, theta * dW, ops)

        theta_f = np.abs(theta_hat)
        innovation = dy - (2.0 * dt) * theta_f * x_hat
        lin_hat = lin_omega_hat - (half_dt_over_eta * theta_hat**2)[:, None, None] * ops.lam_diff_sq
        rho_hat, bad_filter = _evolve_batch(rho_hat, x_hat, u_dt, lin_hat,
                                            theta_f * innovation, ops)

        theta_hat = theta_hat + f_k * (-x_hat * x_hat * theta_hat * dt + 0.5 * x_hat * dy)
        if config.theta_floor is not None:
            np.maximum(theta_hat, config.theta_floor, out=theta_hat)

        newly_bad = (bad_true | bad_filter) & ~failed
        if np.any(newly_bad):
            failed |= newly_bad
            fail_step[newly_bad] = k
            frozen = np.eye(dim, dtype=complex) / dim
            rho[newly_bad] = frozen
            rho_hat[newly_bad] = frozen
            theta_hat[newly_bad] = fp.theta0

    records = []
    for b, seed in enumerate(seeds):
        data = {}
        for name in TrajectoryRecord.SERIES:
            values = series[name][b].copy()
            if failed[b]:
                values[rec_idx >= fail_step[b]] = np.nan
            values.setflags(write=False)
            data[name] = values
        t_axis = times.copy()
        t_axis.setflags(write=False)
        records.append(TrajectoryRecord(seed=seed, target=nb, theta=theta,
                                        times=t_axis, **data))
    failures = [TrajectoryFailure(seed=seeds[b], step=int(fail_step[b]))
                for b in range(n_traj) if failed[b]]
    return records, failures


def simulate_trajectory(config: ExperimentConfig, seed: int,
                        output_stride: int | None = None) -> TrajectoryRecord:
    """Simulate a single realization; deterministic given (config, seed).

    Raises ``ProjectionError`` (with the failing step index) if the state
    update ever leaves the recoverable set.
    """
    records, failures = simulate_batch(config, [seed], output_stride=output_stride)
    if failures:
        raise ProjectionError(f"trajectory {failures[0]}")
    return records[0]
