"""
Ground-truth stochastic Schroedinger dynamics.

Each realization evolves under H(t) = f_x(t) X + f_y(t) Y + g b(t) Z with
piecewise-constant steps at the grid midpoints. Averaging the realizations
gives the tomography expectations, the Pauli transfer matrix and the gate
fidelities.
"""

import concurrent.futures
import dataclasses
import typing

import numpy as np

from . import qcore
from .control import PulseParams, PulseShapeConfig, field_values
from .exceptions import ConfigError
from .noise import NoiseSpec, Trajectory, sample_trajectories
from .stats import RunningMoments

CHUNK_SIZE = 256


@dataclasses.dataclass(frozen=True)
class Execution:
    """How realizations are scheduled.

    Both modes merge chunks in index order, so a thread pool gives the same
    bits as one thread. Deterministic mode runs everything on the calling
    thread and records zero wall time in training histories.
    """
    threads: int = 1
    deterministic: bool = False

    @property
    def sequential(self) -> bool:
        return self.deterministic or self.threads <= 1


SEQUENTIAL = Execution()


@dataclasses.dataclass(frozen=True, eq=False)
class RealizationResult:
    unitary: np.ndarray
    seed: int


@dataclasses.dataclass(frozen=True, eq=False)
class MonteCarloEstimate:
    expectations: np.ndarray
    stderr: np.ndarray
    realizations: int


@dataclasses.dataclass(frozen=True, eq=False)
class FidelityEstimate:
    values: np.ndarray
    stderr: np.ndarray
    realizations: int
    gates: typing.Tuple[str, ...] = ()


def _propagate(fx, fy, hz, dt):
    return qcore.ordered_product(qcore.su2_step(fx, fy, hz, dt))


def simulate_realization(p: PulseParams, traj: Trajectory, spec: NoiseSpec,
                         cfg: PulseShapeConfig) -> RealizationResult:
    if traj.grid != cfg.grid:
        raise ConfigError("Trajectory and pulse shapes are sampled on different grids")
    fx, fy = field_values(p, cfg)
    unitary = _propagate(fx, fy, spec.g * traj.values, cfg.grid.dt)
    return RealizationResult(unitary, traj.seed)


def realization_unitaries(p: PulseParams, spec: NoiseSpec, cfg: PulseShapeConfig,
                          seed: int, start: int, count: int) -> np.ndarray:
    """U(T) of realizations start .. start+count-1, shape (count, 2, 2)."""
    fx, fy = field_values(p, cfg)
    if spec.g == 0:
        single = _propagate(fx, fy, 0.0, cfg.grid.dt)
        return np.broadcast_to(single, (count, 2, 2))
    beta = sample_trajectories(spec, cfg.grid, seed, start, count)
    return _propagate(fx, fy, spec.g * beta, cfg.grid.dt)


def _chunk_moments(p, spec, cfg, seed, start, count, targets):
    unitaries = realization_unitaries(p, spec, cfg, seed, start, count)
    expectations = qcore.tomography_expectations(unitaries)
    moments = RunningMoments((6, 3)).update(expectations)
    fidelity_moments = None
    if targets:
        ptms = qcore.ptm_from_expectations(expectations)
        fidelities = np.stack([qcore.avg_gate_fidelity(ptms, t) for t in targets], axis=-1)
        fidelity_moments = RunningMoments((len(targets),)).update(fidelities)
    return moments, fidelity_moments


def _run(p, spec, cfg, realizations, seed, targets, execution):
    if realizations < 2:
        raise ConfigError(f"At least 2 realizations are needed, got {realizations}")
    p.check_bounds(cfg)

    if spec.g == 0:
        # every realization is the noiseless one
        moments, fidelity_moments = _chunk_moments(p, spec, cfg, seed, 0, 1, targets)
        moments.count = realizations
        if fidelity_moments is not None:
            fidelity_moments.count = realizations
        return moments, fidelity_moments

    starts = range(0, realizations, CHUNK_SIZE)
    jobs = [(start, min(CHUNK_SIZE, realizations - start)) for start in starts]
    total = RunningMoments((6, 3))
    total_fidelity = RunningMoments((len(targets),)) if targets else None

    def merge(result):
        moments, fidelity_moments = result
        total.merge(moments)
        if total_fidelity is not None:
            total_fidelity.merge(fidelity_moments)

    if execution.sequential:
        for start, count in jobs:
            merge(_chunk_moments(p, spec, cfg, seed, start, count, targets))
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=execution.threads) as pool:
            futures = [
                pool.submit(_chunk_moments, p, spec, cfg, seed, start, count, targets)
                for start, count in jobs
            ]
            for future in futures:
                merge(future.result())
    return total, total_fidelity


def monte_carlo_expectations(p: PulseParams, spec: NoiseSpec, realizations: int, seed: int,
                             cfg: typing.Optional[PulseShapeConfig] = None,
                             execution: Execution = SEQUENTIAL) -> MonteCarloEstimate:
    cfg = cfg or PulseShapeConfig()
    moments, _ = _run(p, spec, cfg, realizations, seed, (), execution)
    return MonteCarloEstimate(moments.mean, moments.stderr, realizations)


def simulate_channel(p: PulseParams, spec: NoiseSpec, realizations: int, seed: int,
                     cfg: typing.Optional[PulseShapeConfig] = None,
                     execution: Execution = SEQUENTIAL) -> np.ndarray:
    estimate = monte_carlo_expectations(p, spec, realizations, seed, cfg, execution)
    return qcore.ptm_from_expectations(estimate.expectations)


def gate_fidelities(p: PulseParams, spec: NoiseSpec, gates: typing.Sequence[qcore.GateTarget],
                    realizations: int, seed: int,
                    cfg: typing.Optional[PulseShapeConfig] = None,
                    execution: Execution = SEQUENTIAL) -> FidelityEstimate:
    """Average gate fidelity of the simulated channel to each target.

    Fidelity is linear in the expectations, so the per-realization
    fidelities average to the fidelity of the averaged channel and their
    spread gives the standard error directly.
    """
    if not gates:
        raise ConfigError("No gate targets given")
    cfg = cfg or PulseShapeConfig()
    _, fidelity_moments = _run(p, spec, cfg, realizations, seed, tuple(gates), execution)
    values = np.clip(fidelity_moments.mean, 0.0, 1.0)
    return FidelityEstimate(
        values, fidelity_moments.stderr, realizations, tuple(g.label for g in gates)
    )


def rtn_coherence(gamma, g, t):
    """<X>(t) of a free qubit starting in |+> under telegraph dephasing.

    Two-state solution for switching rate gamma and phase rate 2 g:
    e^(-gamma t) [cosh(mu t) + (gamma / mu) sinh(mu t)], mu = sqrt(gamma^2 - 4 g^2),
    continued analytically (cos / sin) when 2 g > gamma.
    """
    t = np.asarray(t, dtype=float)
    mu = np.sqrt(complex(gamma ** 2 - 4 * g ** 2))
    if abs(mu) < 1e-12:
        return np.exp(-gamma * t) * (1 + gamma * t)
    value = np.exp(-gamma * t) * (np.cosh(mu * t) + gamma / mu * np.sinh(mu * t))
    return value.real


def ou_coherence(gamma, g, t):
    """Gaussian dephasing exp(-<phi^2>/2) for the unit-variance OU process."""
    t = np.asarray(t, dtype=float)
    return np.exp(-(g / gamma) ** 2 * (2 * gamma * t - 1 + np.exp(-2 * gamma * t)))
