"""
Classical dephasing noise: random telegraph noise (RTN) and the
Ornstein-Uhlenbeck (OU) process, both with unit variance, autocorrelation
exp(-2 gamma |tau|) and the Lorentzian spectrum S(w) = 4 gamma / (4 gamma^2 + w^2).
"""

import dataclasses
import math
import typing

import numpy as np
from scipy import signal

from .exceptions import ConfigError
from .labels import NoiseKind
from .stats import RunningMoments

SEED_MASK = (1 << 64) - 1


@dataclasses.dataclass(frozen=True)
class TimeGrid:
    duration: float = 1.0
    steps: int = 1024

    def __post_init__(self):
        if self.steps < 2:
            raise ConfigError(f"Time grid needs at least 2 steps, got {self.steps}")
        if not self.duration > 0:
            raise ConfigError(f"Time grid duration must be positive, got {self.duration}")

    @property
    def dt(self) -> float:
        return self.duration / self.steps

    def midpoints(self) -> np.ndarray:
        return (np.arange(self.steps) + 0.5) * self.dt


@dataclasses.dataclass(frozen=True)
class NoiseSpec:
    kind: NoiseKind
    gamma: float
    g: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError(f"Noise rate gamma must be positive, got {self.gamma}")
        if not self.g >= 0:
            raise ConfigError(f"Coupling g must be non-negative, got {self.g}")

    @property
    def ratio(self) -> float:
        """Markovianity ratio g / gamma."""
        return self.g / self.gamma

    def to_dict(self):
        return {"kind": self.kind.value, "gamma": self.gamma, "g": self.g}

    @classmethod
    def from_dict(cls, data):
        return cls(NoiseKind(data["kind"]), float(data["gamma"]), float(data["g"]))


@dataclasses.dataclass(frozen=True, eq=False)
class Trajectory:
    values: np.ndarray
    grid: TimeGrid
    seed: int
    index: int = 0


def rng_stream(seed: int, index: int = 0) -> np.random.Generator:
    """Independent counter-based stream for (seed, index)."""
    key = np.array([seed & SEED_MASK, index & SEED_MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(*keys: int) -> int:
    entropy = [k & SEED_MASK for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


def _rtn_values(gamma, grid, rng):
    start = 1.0 if rng.integers(2) else -1.0
    mean_switches = gamma * grid.duration
    block = int(mean_switches + 6 * math.sqrt(mean_switches) + 8)
    times = np.cumsum(rng.exponential(1 / gamma, size=block))
    while times[-1] < grid.duration:
        extra = times[-1] + np.cumsum(rng.exponential(1 / gamma, size=block))
        times = np.concatenate([times, extra])
    switches = np.searchsorted(times, grid.midpoints(), side="right")
    return start * (1.0 - 2.0 * (switches % 2))


def _ou_filter(gamma, grid, normals):
    """Exact AR(1) discretization applied along the last axis."""
    decay = math.exp(-2 * gamma * grid.dt)
    scale = math.sqrt(-math.expm1(-4 * gamma * grid.dt))
    first = normals[..., :1]
    rest, _ = signal.lfilter(
        [scale], [1.0, -decay], normals[..., 1:], axis=-1, zi=decay * first
    )
    return np.concatenate([first, rest], axis=-1)


def sample_rtn(gamma: float, grid: TimeGrid, seed: int, index: int = 0) -> Trajectory:
    """Telegraph path with exponential(gamma) waiting times, read at step midpoints."""
    if not gamma > 0:
        raise ConfigError(f"Noise rate gamma must be positive, got {gamma}")
    values = _rtn_values(gamma, grid, rng_stream(seed, index))
    return Trajectory(values, grid, seed, index)


def sample_ou(gamma: float, grid: TimeGrid, seed: int, index: int = 0) -> Trajectory:
    """Stationary OU path: b[m+1] = b[m] e^(-2 gamma dt) + sqrt(1 - e^(-4 gamma dt)) xi[m]."""
    if not gamma > 0:
        raise ConfigError(f"Noise rate gamma must be positive, got {gamma}")
    normals = rng_stream(seed, index).standard_normal(grid.steps)
    return Trajectory(_ou_filter(gamma, grid, normals), grid, seed, index)


def sample_trajectories(spec: NoiseSpec, grid: TimeGrid, seed: int,
                        start: int, count: int) -> np.ndarray:
    """Rows start .. start+count-1 of the trajectory family of `seed`, shape (count, M).

    Row k is bit-identical to the single-trajectory sampler called with
    index = start + k.
    """
    if spec.kind == NoiseKind.RTN:
        rows = [_rtn_values(spec.gamma, grid, rng_stream(seed, start + k)) for k in range(count)]
        return np.array(rows).reshape(count, grid.steps)

    normals = np.empty((count, grid.steps))
    for k in range(count):
        normals[k] = rng_stream(seed, start + k).standard_normal(grid.steps)
    return _ou_filter(spec.gamma, grid, normals)


def sample(spec: NoiseSpec, grid: TimeGrid, seed: int, index: int = 0) -> Trajectory:
    if spec.kind == NoiseKind.RTN:
        return sample_rtn(spec.gamma, grid, seed, index)
    return sample_ou(spec.gamma, grid, seed, index)


def lorentzian_psd(gamma, omega):
    omega = np.asarray(omega, dtype=float)
    return 4 * gamma / (4 * gamma ** 2 + omega ** 2)


def theory_autocorrelation(gamma, tau):
    return np.exp(-2 * gamma * np.abs(np.asarray(tau, dtype=float)))


@dataclasses.dataclass(frozen=True, eq=False)
class SpectralTable:
    """Estimated curve with per-point standard errors.

    `x` is the lag (time units) for autocorrelations and the angular
    frequency for spectra.
    """
    x: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    count: int


class AutocorrelationEstimator:
    """Unbiased <b(t) b(t + tau)> averaged over time and over trajectories.

    Each trajectory contributes its time average over the M - l available
    pairs at lag l; standard errors come from the spread across trajectories.
    """

    def __init__(self, grid: TimeGrid, max_lag_steps: int):
        self.grid = grid
        self.max_lag_steps = min(int(max_lag_steps), grid.steps - 1)
        self._nfft = 1 << (2 * grid.steps - 1).bit_length()
        self._pairs = grid.steps - np.arange(self.max_lag_steps + 1)
        self.moments = RunningMoments((self.max_lag_steps + 1,))

    def update(self, batch):
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        if batch.shape[-1] != self.grid.steps:
            raise ConfigError(
                f"Trajectory length {batch.shape[-1]} does not match grid ({self.grid.steps})"
            )
        spectrum = np.fft.rfft(batch, n=self._nfft, axis=-1)
        lagged = np.fft.irfft(np.abs(spectrum) ** 2, n=self._nfft, axis=-1)
        self.moments.update(lagged[:, :self.max_lag_steps + 1] / self._pairs)
        return self

    def result(self) -> SpectralTable:
        lags = np.arange(self.max_lag_steps + 1) * self.grid.dt
        return SpectralTable(lags, self.moments.mean, self.moments.stderr, self.moments.count)


class PsdEstimator:
    """Trajectory-averaged periodogram P(w_k) = dt / M |sum_m b_m e^(-i w_k m dt)|^2.

    Reported for w_k >= 0 and normalized as the Fourier transform of the
    autocorrelation, so S(0) of a unit-variance process equals its
    integrated correlation time.
    """

    def __init__(self, grid: TimeGrid):
        self.grid = grid
        self.moments = RunningMoments((grid.steps // 2 + 1,))

    def update(self, batch):
        batch = np.atleast_2d(np.asarray(batch, dtype=float))
        if batch.shape[-1] != self.grid.steps:
            raise ConfigError(
                f"Trajectory length {batch.shape[-1]} does not match grid ({self.grid.steps})"
            )
        spectrum = np.fft.rfft(batch, axis=-1)
        self.moments.update(np.abs(spectrum) ** 2 * (self.grid.dt / self.grid.steps))
        return self

    def result(self) -> SpectralTable:
        omega = 2 * np.pi * np.fft.rfftfreq(self.grid.steps, d=self.grid.dt)
        return SpectralTable(omega, self.moments.mean, self.moments.stderr, self.moments.count)


def _stack(trajectories: typing.Sequence[Trajectory]):
    if len(trajectories) < 2:
        raise ConfigError("At least two trajectories are needed for an estimate")
    grid = trajectories[0].grid
    for i, traj in enumerate(trajectories):
        if traj.grid != grid:
            raise ConfigError(f"Trajectory {i} lives on a different time grid")
    return grid, np.stack([traj.values for traj in trajectories])


def estimate_autocorrelation(trajectories: typing.Sequence[Trajectory],
                             max_lag: float) -> SpectralTable:
    grid, values = _stack(trajectories)
    estimator = AutocorrelationEstimator(grid, int(round(max_lag / grid.dt)))
    return estimator.update(values).result()


def estimate_psd(trajectories: typing.Sequence[Trajectory]) -> SpectralTable:
    grid, values = _stack(trajectories)
    return PsdEstimator(grid).update(values).result()


def psd_from_autocorrelation(acf: SpectralTable, grid: TimeGrid) -> np.ndarray:
    """Discrete Wiener-Khinchin transform of a full-length unbiased autocorrelation.

    Reweights by the triangular factor (1 - l / M) so the result is directly
    comparable with `PsdEstimator` on the same data.
    """
    lags = np.arange(len(acf.values))
    weighted = acf.values * (1 - lags / grid.steps)
    omega = 2 * np.pi * np.fft.rfftfreq(grid.steps, d=grid.dt)
    phases = np.cos(np.outer(omega, lags * grid.dt))
    return grid.dt * (weighted[0] + 2 * phases[:, 1:] @ weighted[1:])


def fit_decay_rate(acf: SpectralTable, max_lag: typing.Optional[float] = None,
                   floor: float = 0.05) -> float:
    """Weighted least-squares rate k of acf ~ exp(-k tau); equals 2 gamma here."""
    keep = acf.values > floor
    if max_lag is not None:
        keep &= acf.x <= max_lag
    if np.count_nonzero(keep) < 2:
        raise ConfigError("Not enough positive autocorrelation points for a fit")
    rel_err = np.where(acf.stderr[keep] > 0, acf.stderr[keep] / acf.values[keep], 1.0)
    weights = 1 / np.maximum(rel_err, 1e-12)
    slope, _ = np.polyfit(acf.x[keep], np.log(acf.values[keep]), 1, w=weights)
    return -float(slope)
