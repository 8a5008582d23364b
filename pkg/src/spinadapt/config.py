"""Experiment configuration: flat key-value files, validation, defaults.

The config format is plain text, one ``key = value`` per line, with ``#``
comments and case-sensitive keys.  See CONFIG.md at the repository root for
the full schema.  Validation failures raise ``ConfigError`` whose message
starts with the offending key.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .params import FilterParams, GainSchedule, SystemParams
from .states import DensityMatrix, InvalidStateError


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


def parse_kv_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file into a string dict."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


@dataclass(frozen=True)
class InitialState:
    """Initial-state choice for one side of the simulation.

    Kinds: ``random_hs`` (fresh full-rank random state per realization),
    ``maximally_mixed``, ``projector`` (basis projector by index), and
    ``explicit`` (a validated matrix loaded from a file).
    """

    kind: str
    index: int | None = None
    matrix: np.ndarray | None = None

    def realize(self, ops, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "random_hs":
            return np.array(DensityMatrix.random_hs(ops.dim, rng).matrix)
        if self.kind == "maximally_mixed":
            return np.eye(ops.dim, dtype=complex) / ops.dim
        if self.kind == "projector":
            return np.array(ops.equilibria[self.index].matrix)
        if self.kind == "explicit":
            return np.array(self.matrix)
        raise ValueError(f"unknown initial-state kind {self.kind!r}")

    def describe(self) -> str:
        if self.kind == "projector":
            return f"projector:{self.index}"
        if self.kind == "explicit":
            return "explicit"
        return self.kind


def _parse_initial_state(key: str, text: str, allowed: tuple[str, ...]) -> InitialState:
    if text in ("random_hs", "maximally_mixed"):
        kind = text
        state = InitialState(kind=kind)
    elif text.startswith("projector:"):
        try:
            index = int(text.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"{key}: bad projector index in {text!r}") from None
        state = InitialState(kind="projector", index=index)
    elif text.startswith("file:"):
        path = text.split(":", 1)[1].strip()
        try:
            mat = np.loadtxt(path, dtype=complex, ndmin=2)
        except OSError as exc:
            raise ConfigError(f"{key}: cannot read matrix file {path!r}: {exc}") from None
        try:
            state = InitialState(kind="explicit", matrix=DensityMatrix(mat).matrix)
        except InvalidStateError as exc:
            raise ConfigError(f"{key}: {path!r} is not a density matrix: {exc}") from None
    else:
        raise ConfigError(f"{key}: unrecognized initial state {text!r}")
    if state.kind not in allowed:
        raise ConfigError(f"{key}: kind {state.kind!r} not allowed here (choose from {allowed})")
    return state


_REQUIRED = ("N", "n_bar", "omega", "M", "eta", "omega_hat", "M_hat0", "eta_hat",
             "K", "p", "T", "realizations", "base_seed")

_DEFAULTS = {
    "gain_fb": "4.0",
    "feedforward": "true",
    "dt": "0.01",
    "output_stride": "10",
    "initial_true_state": "random_hs",
    "initial_filter_state": "maximally_mixed",
    "theta_floor": "none",
    "conv_tol": "0.05",
    "out_dir": "out",
    "threads": "none",
}


def _to_int(key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _to_float(key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}") from None


def _to_bool(key: str, text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated parameters of a Monte Carlo experiment."""

    n_levels: int
    n_bar: int
    system: SystemParams
    filter_params: FilterParams
    gain: GainSchedule
    horizon: float
    realizations: int
    base_seed: int
    gain_fb: float = 4.0
    feedforward: bool = True
    dt: float = 0.01
    output_stride: int = 10
    initial_true: InitialState = field(default_factory=lambda: InitialState("random_hs"))
    initial_filter: InitialState = field(default_factory=lambda: InitialState("maximally_mixed"))
    theta_floor: float | None = None
    conv_tol: float = 0.05
    out_dir: str = "out"
    threads: int | None = None

    def __post_init__(self):
        if self.n_levels < 2:
            raise ConfigError(f"N: must be >= 2, got {self.n_levels}")
        if not 0 <= self.n_bar < self.n_levels:
            raise ConfigError(f"n_bar: index {self.n_bar} out of range for N={self.n_levels}")
        if self.dt <= 0:
            raise ConfigError(f"dt: must be > 0, got {self.dt}")
        if self.horizon < 0:
            raise ConfigError(f"T: must be >= 0, got {self.horizon}")
        if self.realizations < 1:
            raise ConfigError(f"realizations: must be >= 1, got {self.realizations}")
        if self.output_stride < 1:
            raise ConfigError(f"output_stride: must be >= 1, got {self.output_stride}")
        if self.gain_fb < 0:
            raise ConfigError(f"gain_fb: must be >= 0, got {self.gain_fb}")
        if self.conv_tol <= 0:
            raise ConfigError(f"conv_tol: must be > 0, got {self.conv_tol}")
        if self.theta_floor is not None and self.theta_floor < 0:
            raise ConfigError(f"theta_floor: must be >= 0 or none, got {self.theta_floor}")
        if self.threads is not None and self.threads < 1:
            raise ConfigError(f"threads: must be >= 1 or none, got {self.threads}")
        for key, state in (("initial_true_state", self.initial_true),
                           ("initial_filter_state", self.initial_filter)):
            if state.kind == "projector" and not 0 <= state.index < self.n_levels:
                raise ConfigError(f"{key}: projector index {state.index} out of range for N={self.n_levels}")
            if state.kind == "explicit" and state.matrix.shape[0] != self.n_levels:
                raise ConfigError(
                    f"{key}: matrix dimension {state.matrix.shape[0]} does not match N={self.n_levels}")
        p = self.gain.p
        if not 0.5 < p <= 1.0:
            warnings.warn(
                f"gain exponent p={p} lies outside (0.5, 1], the range required "
                "by the local-convergence guarantee", UserWarning, stacklevel=2)
        if p <= 0 and self.feedforward:
            warnings.warn(
                f"p={p} makes the feedforward excitation non-decreasing; it will "
                "not vanish over the horizon", UserWarning, stacklevel=2)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def echo(self) -> str:
        """Canonical key = value rendering (for manifests)."""
        floor = "none" if self.theta_floor is None else repr(self.theta_floor)
        threads = "none" if self.threads is None else str(self.threads)
        lines = [
            f"N = {self.n_levels}",
            f"n_bar = {self.n_bar}",
            f"omega = {self.system.omega!r}",
            f"M = {self.system.M!r}",
            f"eta = {self.system.eta!r}",
            f"omega_hat = {self.filter_params.omega_hat!r}",
            f"M_hat0 = {self.filter_params.M_hat0!r}",
            f"eta_hat = {self.filter_params.eta_hat!r}",
            f"K = {self.gain.K!r}",
            f"p = {self.gain.p!r}",
            f"gain_fb = {self.gain_fb!r}",
            f"feedforward = {str(self.feedforward).lower()}",
            f"dt = {self.dt!r}",
            f"T = {self.horizon!r}",
            f"realizations = {self.realizations}",
            f"base_seed = {self.base_seed}",
            f"output_stride = {self.output_stride}",
            f"initial_true_state = {self.initial_true.describe()}",
            f"initial_filter_state = {self.initial_filter.describe()}",
            f"theta_floor = {floor}",
            f"conv_tol = {self.conv_tol!r}",
            f"out_dir = {self.out_dir}",
            f"threads = {threads}",
        ]
        return "\n".join(lines)

    @classmethod
    def from_dict(cls, raw: dict[str, str]) -> "ExperimentConfig":
        known = set(_REQUIRED) | set(_DEFAULTS)
        for key in raw:
            if key not in known:
                raise ConfigError(f"{key}: unknown configuration key")
        for key in _REQUIRED:
            if key not in raw:
                raise ConfigError(f"{key}: required key is missing")
        merged = dict(_DEFAULTS)
        merged.update(raw)

        try:
            system = SystemParams(omega=_to_float("omega", merged["omega"]),
                                  M=_to_float("M", merged["M"]),
                                  eta=_to_float("eta", merged["eta"]))
        except ValueError as exc:
            raise ConfigError(f"system parameters: {exc}") from None
        try:
            filter_params = FilterParams(omega_hat=_to_float("omega_hat", merged["omega_hat"]),
                                         M_hat0=_to_float("M_hat0", merged["M_hat0"]),
                                         eta_hat=_to_float("eta_hat", merged["eta_hat"]))
        except ValueError as exc:
            raise ConfigError(f"filter parameters: {exc}") from None
        try:
            gain = GainSchedule(K=_to_float("K", merged["K"]), p=_to_float("p", merged["p"]))
        except ValueError as exc:
            raise ConfigError(f"gain schedule: {exc}") from None

        floor_text = merged["theta_floor"].lower()
        theta_floor = None if floor_text == "none" else _to_float("theta_floor", merged["theta_floor"])
        threads_text = merged["threads"].lower()
        threads = None if threads_text in ("none", "auto") else _to_int("threads", merged["threads"])

        return cls(
            n_levels=_to_int("N", merged["N"]),
            n_bar=_to_int("n_bar", merged["n_bar"]),
            system=system,
            filter_params=filter_params,
            gain=gain,
            gain_fb=_to_float("gain_fb", merged["gain_fb"]),
            feedforward=_to_bool("feedforward", merged["feedforward"]),
            dt=_to_float("dt", merged["dt"]),
            horizon=_to_float("T", merged["T"]),
            realizations=_to_int("realizations", merged["realizations"]),
            base_seed=_to_int("base_seed", merged["base_seed"]),
            output_stride=_to_int("output_stride", merged["output_stride"]),
            initial_true=_parse_initial_state(
                "initial_true_state", merged["initial_true_state"],
                allowed=("random_hs", "projector", "explicit")),
            initial_filter=_parse_initial_state(
                "initial_filter_state", merged["initial_filter_state"],
                allowed=("maximally_mixed", "projector", "explicit")),
            theta_floor=theta_floor,
            conv_tol=_to_float("conv_tol", merged["conv_tol"]),
            out_dir=merged["out_dir"],
            threads=threads,
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        return cls.from_dict(parse_kv_file(path))
