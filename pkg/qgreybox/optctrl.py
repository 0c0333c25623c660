"""
Pulse design through the trained emulator, checked against the simulator.
"""

import dataclasses
import math
import typing

import numpy as np
import torch

from .control import PulseParams
from .dynamics import FidelityEstimate, SEQUENTIAL, gate_fidelities
from .exceptions import ConfigError, NumericError
from .greybox import DTYPE
from .labels import Gate
from .logging import logger
from .noise import rng_stream


@dataclasses.dataclass(frozen=True)
class OptimizeConfig:
    gate: Gate = Gate.I
    restarts: int = 8
    iterations: int = 300
    step_size: float = 2.0
    backtrack: float = 0.5
    min_step: float = 1e-6
    bound: float = 100.0
    init_scale: float = 0.5
    zero_start: bool = True
    tolerance: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ConfigError("optimize.restarts must be at least 1")
        if self.iterations < 0:
            raise ConfigError("optimize.iterations must not be negative")
        if not self.bound > 0:
            raise ConfigError("optimize.bound must be positive")
        if not 0 < self.backtrack < 1:
            raise ConfigError("optimize.backtrack must lie in (0, 1)")
        if not self.step_size > 0:
            raise ConfigError("optimize.step_size must be positive")
        if not 0 <= self.init_scale <= 1:
            raise ConfigError("optimize.init_scale must lie in [0, 1]")


@dataclasses.dataclass(eq=False)
class RestartTrace:
    initial: PulseParams
    params: PulseParams
    predicted: float
    trace: typing.List[typing.Tuple[int, float, float]]
    verified: float = math.nan
    verified_stderr: float = math.nan
    diverged: bool = False
    estimate: typing.Optional[FidelityEstimate] = None


@dataclasses.dataclass(eq=False)
class OptimizationReport:
    gate: Gate
    params: PulseParams
    predicted: float
    verified: float
    verified_stderr: float
    verification: FidelityEstimate
    restarts: typing.List[RestartTrace]

    @property
    def gap(self) -> float:
        """Emulator minus simulator fidelity at the returned pulses."""
        return self.predicted - self.verified

    def to_dict(self):
        return {
            "gate": self.gate.value,
            "pulses": self.params.to_dict(),
            "predicted": self.predicted,
            "verified": self.verified,
            "verified_stderr": self.verified_stderr,
            "all_gates": {
                "gates": list(self.verification.gates),
                "verified": self.verification.values.tolist(),
                "stderr": self.verification.stderr.tolist(),
                "realizations": self.verification.realizations,
            },
            "restarts": [
                {
                    "predicted": r.predicted,
                    "verified": r.verified,
                    "verified_stderr": r.verified_stderr,
                    "diverged": r.diverged,
                    "iterations": len(r.trace),
                }
                for r in self.restarts
            ],
        }

    def trace_rows(self):
        return [
            [restart, iteration, predicted, step]
            for restart, r in enumerate(self.restarts)
            for iteration, predicted, step in r.trace
        ]


def _initial_guess(cfg, restart, n_pulses):
    if restart == 0 and cfg.zero_start:
        return np.zeros((2, n_pulses))
    scale = cfg.init_scale * cfg.bound
    return rng_stream(cfg.seed, restart).uniform(-scale, scale, size=(2, n_pulses))


def ascend(model, gate_index, start, cfg):
    """Projected Adam ascent on the predicted fidelity of one gate.

    A step that lowers the prediction is undone and the step size shrinks,
    so the best-so-far prediction never decreases.
    """
    x = torch.tensor(start, dtype=DTYPE, requires_grad=True)
    optimizer = torch.optim.Adam([x], lr=cfg.step_size, maximize=True)

    def objective():
        return model(x[None])[0, gate_index]

    best = objective()
    if not torch.isfinite(best):
        initial = PulseParams.from_array(start)
        return RestartTrace(initial, initial, math.nan, [], diverged=True)
    best_x = x.detach().clone()
    best_value = best.item()
    step = cfg.step_size
    trace = [(0, best_value, step)]

    for iteration in range(1, cfg.iterations + 1):
        if best_value >= 1 - cfg.tolerance or step < cfg.min_step:
            break
        optimizer.zero_grad()
        value = objective()
        value.backward()
        if not bool(torch.isfinite(x.grad).all()):
            break
        optimizer.step()
        with torch.no_grad():
            x.clamp_(-cfg.bound, cfg.bound)
            candidate = objective().item()

        if math.isfinite(candidate) and candidate >= best_value:
            best_value = candidate
            best_x = x.detach().clone()
        else:
            step *= cfg.backtrack
            for group in optimizer.param_groups:
                group["lr"] = step
            with torch.no_grad():
                x.copy_(best_x)
        trace.append((iteration, best_value, step))

    return RestartTrace(
        PulseParams.from_array(start), PulseParams.from_array(best_x.numpy()), best_value, trace
    )


def verify_pulses(p, spec, gates, realizations, seed, cfg=None, execution=SEQUENTIAL):
    return gate_fidelities(p, spec, gates, realizations, seed, cfg, execution)


def optimize_pulses(model, gate, cfg, spec, verify_realizations=10000, verify_seed=0,
                    execution=SEQUENTIAL):
    """Best of several projected-ascent restarts, ranked by simulator fidelity."""
    if cfg.bound > model.shape.a_max:
        raise ConfigError(
            f"optimize.bound {cfg.bound} exceeds the amplitude limit {model.shape.a_max}"
        )
    gate_index = model.gate_index(gate.gate)

    requires_grad = [p.requires_grad for p in model.parameters()]
    model.requires_grad_(False)
    try:
        restarts = []
        for restart in range(cfg.restarts):
            start = _initial_guess(cfg, restart, model.shape.n_pulses)
            result = ascend(model, gate_index, start, cfg)
            if math.isfinite(result.predicted):
                estimate = verify_pulses(
                    result.params, spec, model.gates, verify_realizations, verify_seed,
                    model.shape, execution,
                )
                result.verified = float(estimate.values[gate_index])
                result.verified_stderr = float(estimate.stderr[gate_index])
                result.estimate = estimate
            else:
                result.diverged = True
            logger.progress(
                f"  {gate.label} restart {restart + 1}/{cfg.restarts}: predicted "
                f"{result.predicted:.5f}, verified {result.verified:.5f}"
            )
            restarts.append(result)
    finally:
        for p, flag in zip(model.parameters(), requires_grad):
            p.requires_grad_(flag)

    finished = [r for r in restarts if not r.diverged]
    if not finished:
        raise NumericError(
            f"All {cfg.restarts} restarts diverged for gate {gate.label} "
            f"(step size {cfg.step_size}, bound {cfg.bound})"
        )
    best = max(finished, key=lambda r: r.verified)
    return OptimizationReport(
        gate.gate, best.params, best.predicted, best.verified, best.verified_stderr,
        best.estimate, restarts,
    )
