"""Monte Carlo orchestration: parallel ensembles, summary statistics,
CSV persistence, and entry/exit-time analysis of the coupling ratio.

Output layout under the configured directory:

    trajectories/traj_<seed>.csv   one sampled series per realization
    summary.csv                    per-time ensemble mean/variance
    manifest.txt                   config echo, code version, seed range

All floats are written with %.17g so parsing a file back reproduces the
exact binary values; summaries are therefore byte-identical across repeat
runs and across worker counts.
"""

from __future__ import annotations

import math
import multiprocessing
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .control import RobustBounds, robust_bounds
from .engine import TrajectoryFailure, TrajectoryRecord, simulate_batch

TRAJECTORY_HEADER = "t,theta_hat,ratio,u,d_B,Delta,C_theta,fid_true,fid_filter"
_TRAJECTORY_FIELDS = ("theta_hat", "ratio", "u", "d_b", "delta", "c_theta",
                      "fid_true", "fid_filter")
SUMMARY_HEADER = ("t,ratio_mean,ratio_var,d_B_mean,d_B_var,Delta_mean,Delta_var,"
                  "C_theta_mean,C_theta_var,u_mean,u_var")
_SUMMARY_FIELDS = ("ratio", "d_b", "delta", "c_theta", "u")

# Trajectories are evolved in lockstep batches of this size; a constant so
# that chunking (and therefore every floating-point result) is independent
# of the worker count.
BATCH_SIZE = 256


def first_entry_time(times, ratio, bounds: RobustBounds) -> float:
    """Earliest sampled time with the ratio strictly inside the interval;
    ``inf`` if it never enters."""
    times = np.asarray(times, dtype=float)
    ratio = np.asarray(ratio, dtype=float)
    inside = (ratio > 1.0 + bounds.alpha) & (ratio < 1.0 + bounds.beta)
    idx = np.nonzero(inside)[0]
    return float(times[idx[0]]) if idx.size else math.inf


def last_exit_time(times, ratio, bounds: RobustBounds) -> float:
    """Time after which the sampled ratio stays inside the interval.

    Returns the first time of the trailing all-inside run: the start time if
    the series never leaves, and ``inf`` ("never inside") if the final
    sample is still outside.
    """
    times = np.asarray(times, dtype=float)
    ratio = np.asarray(ratio, dtype=float)
    if times.size == 0:
        raise ValueError("empty series")
    inside = (ratio > 1.0 + bounds.alpha) & (ratio < 1.0 + bounds.beta)
    if not inside[-1]:
        return math.inf
    outside_idx = np.nonzero(~inside)[0]
    if outside_idx.size == 0:
        return float(times[0])
    return float(times[outside_idx[-1] + 1])


def check_convergence(record: TrajectoryRecord, target: int, tol: float = 0.05) -> bool:
    """True iff the final recorded distance to the target pair is below tol."""
    if target != record.target:
        raise ValueError(
            f"record was taken against target {record.target}, not {target}")
    return bool(record.d_b[-1] < tol)


@dataclass(frozen=True)
class EnsembleSummary:
    """Aggregate view of one ensemble.

    Per-time statistics are sample means/variances over the surviving
    realizations (variance with ddof=1, defined as 0 for a single
    realization).  Per-trajectory entries are NaN for failed realizations.
    """

    times: np.ndarray
    mean: dict[str, np.ndarray]
    variance: dict[str, np.ndarray]
    first_entry: np.ndarray
    last_exit: np.ndarray
    final_d_b: np.ndarray
    fraction_converged: float
    seeds: tuple[int, ...]
    failures: tuple[TrajectoryFailure, ...]

    @property
    def n_realizations(self) -> int:
        return len(self.seeds)


def resolve_threads(config: ExperimentConfig, override: int | None = None) -> int:
    """Worker count: explicit override, then SPINADAPT_THREADS, then the
    config, then the CPU count."""
    if override is not None:
        if override < 1:
            raise ConfigError(f"threads: must be >= 1, got {override}")
        return override
    env = os.environ.get("SPINADAPT_THREADS")
    if env:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"SPINADAPT_THREADS: expected an integer, got {env!r}") from None
        if value < 1:
            raise ConfigError(f"SPINADAPT_THREADS: must be >= 1, got {value}")
        return value
    if config.threads is not None:
        return config.threads
    return os.cpu_count() or 1


def _simulate_chunk(task) -> tuple[list[TrajectoryRecord], list[TrajectoryFailure]]:
    config, chunk = task
    return simulate_batch(config, chunk)


def _sample_stats(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = stack.mean(axis=0)
    if stack.shape[0] > 1:
        var = stack.var(axis=0, ddof=1)
    else:
        var = np.zeros_like(mean)
    return mean, var


def summarize(records: list[TrajectoryRecord], failures: list[TrajectoryFailure],
              config: ExperimentConfig) -> EnsembleSummary:
    """Aggregate records (in seed order) into an ``EnsembleSummary``."""
    if not records:
        raise ValueError("no records to summarize")
    times = records[0].times
    failed_seeds = {f.seed for f in failures}
    surviving = [r for r in records if r.seed not in failed_seeds]
    if not surviving:
        raise RuntimeError("all realizations failed")

    mean = {}
    variance = {}
    for name in _SUMMARY_FIELDS:
        stack = np.stack([getattr(r, name) for r in surviving])
        mean[name], variance[name] = _sample_stats(stack)

    bounds = robust_bounds(config.n_levels, config.n_bar)
    first_entry = np.full(len(records), np.nan)
    last_exit = np.full(len(records), np.nan)
    final_d_b = np.full(len(records), np.nan)
    converged = 0
    for i, record in enumerate(records):
        if record.seed in failed_seeds:
            continue
        first_entry[i] = first_entry_time(record.times, record.ratio, bounds)
        last_exit[i] = last_exit_time(record.times, record.ratio, bounds)
        final_d_b[i] = record.d_b[-1]
        if record.d_b[-1] < config.conv_tol:
            converged += 1

    return EnsembleSummary(
        times=times,
        mean=mean,
        variance=variance,
        first_entry=first_entry,
        last_exit=last_exit,
        final_d_b=final_d_b,
        fraction_converged=converged / len(surviving),
        seeds=tuple(r.seed for r in records),
        failures=tuple(failures),
    )


def write_trajectory_csv(path: Path, record: TrajectoryRecord) -> None:
    table = np.column_stack([record.times]
                            + [getattr(record, name) for name in _TRAJECTORY_FIELDS])
    np.savetxt(path, table, delimiter=",", header=TRAJECTORY_HEADER,
               comments="", fmt="%.17g")


def read_trajectory_csv(path: Path) -> dict[str, np.ndarray]:
    """Load a persisted trajectory as column name -> array."""
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    names = TRAJECTORY_HEADER.split(",")
    if table.shape[1] != len(names):
        raise ValueError(f"{path}: expected {len(names)} columns, found {table.shape[1]}")
    return {name: table[:, i] for i, name in enumerate(names)}


def write_summary_csv(path: Path, summary: EnsembleSummary) -> None:
    columns = [summary.times]
    for name in _SUMMARY_FIELDS:
        columns.append(summary.mean[name])
        columns.append(summary.variance[name])
    np.savetxt(path, np.column_stack(columns), delimiter=",",
               header=SUMMARY_HEADER, comments="", fmt="%.17g")


def write_manifest(path: Path, config: ExperimentConfig, summary: EnsembleSummary) -> None:
    lines = [f"spinadapt {__version__}", "", "[config]", config.echo(), "", "[seeds]"]
    lines.append(f"seeds = {summary.seeds[0]}..{summary.seeds[-1]}")
    lines.append("")
    lines.append("[failures]")
    if summary.failures:
        lines.extend(str(f) for f in summary.failures)
    else:
        lines.append("none")
    path.write_text("\n".join(lines) + "\n")


def persist(out_dir: Path, config: ExperimentConfig, records: list[TrajectoryRecord],
            summary: EnsembleSummary) -> None:
    out_dir = Path(out_dir)
    traj_dir = out_dir / "trajectories"
    traj_dir.mkdir(parents=True, exist_ok=True)
    for record in records:
        write_trajectory_csv(traj_dir / f"traj_{record.seed}.csv", record)
    write_summary_csv(out_dir / "summary.csv", summary)
    write_manifest(out_dir / "manifest.txt", config, summary)


def run_ensemble(config: ExperimentConfig, threads: int | None = None,
                 out_dir: str | Path | None = None) -> EnsembleSummary:
    """Simulate the configured ensemble, aggregate it, and persist outputs.

    Seeds are ``base_seed .. base_seed + realizations - 1``; the aggregate is
    a deterministic function of the config alone.  Failed realizations are
    excluded from the statistics and reported in ``summary.failures``.
    """
    seeds = list(range(config.base_seed, config.base_seed + config.realizations))
    chunks = [seeds[i:i + BATCH_SIZE] for i in range(0, len(seeds), BATCH_SIZE)]
    workers = resolve_threads(config, threads)

    if workers == 1 or len(chunks) == 1:
        results = [_simulate_chunk((config, chunk)) for chunk in chunks]
    else:
        ctx = multiprocessing.get_context("fork" if hasattr(os, "fork") else None)
        with ctx.Pool(processes=min(workers, len(chunks))) as pool:
            results = pool.map(_simulate_chunk, [(config, chunk) for chunk in chunks])

    records = [record for chunk_records, _ in results for record in chunk_records]
    failures = [failure for _, chunk_failures in results for failure in chunk_failures]
    summary = summarize(records, failures, config)
    persist(Path(out_dir) if out_dir is not None else Path(config.out_dir),
            config, records, summary)
    return summary
