"""
Drive fields built from fixed Gaussian pulses with free amplitudes.
"""

import dataclasses
import functools
import json
import typing

import numpy as np

from .exceptions import ConfigError
from .artifacts import save_json
from .noise import TimeGrid, SEED_MASK

PULSES_PER_AXIS = 5


@dataclasses.dataclass(frozen=True)
class PulseShapeConfig:
    grid: TimeGrid = TimeGrid()
    centers: typing.Optional[typing.Tuple[float, ...]] = None
    width: typing.Optional[float] = None
    a_max: float = 100.0

    def __post_init__(self):
        T = self.grid.duration
        if self.centers is None:
            centers = tuple(k * T / (PULSES_PER_AXIS + 1) for k in range(1, PULSES_PER_AXIS + 1))
            object.__setattr__(self, "centers", centers)
        else:
            object.__setattr__(self, "centers", tuple(float(c) for c in self.centers))
        if self.width is None:
            object.__setattr__(self, "width", T / 30)

        centers = np.array(self.centers)
        if len(centers) == 0:
            raise ConfigError("At least one pulse center is needed")
        if np.any(np.diff(centers) <= 0) or centers[0] <= 0 or centers[-1] >= T:
            raise ConfigError(f"Pulse centers must increase strictly inside (0, {T})")
        if not self.width > 0:
            raise ConfigError(f"Pulse width must be positive, got {self.width}")
        if not self.a_max > 0:
            raise ConfigError(f"Amplitude bound must be positive, got {self.a_max}")

    @property
    def n_pulses(self) -> int:
        return len(self.centers)

    @functools.cached_property
    def basis(self) -> np.ndarray:
        """Gaussian basis G[k, m] sampled at step midpoints; f = A @ G."""
        basis = gaussians(self, self.grid.midpoints())
        basis.flags.writeable = False
        return basis

    def neighbour_overlap(self) -> float:
        gaps = np.diff(self.centers)
        if len(gaps) == 0:
            return 0.0
        return float(np.exp(-np.min(gaps) ** 2 / (2 * self.width ** 2)))

    def to_dict(self):
        return {
            "duration": self.grid.duration,
            "steps": self.grid.steps,
            "centers": list(self.centers),
            "width": self.width,
            "a_max": self.a_max,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            TimeGrid(float(data["duration"]), int(data["steps"])),
            tuple(data["centers"]),
            float(data["width"]),
            float(data["a_max"]),
        )


def gaussians(cfg: PulseShapeConfig, times) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    centers = np.array(cfg.centers)[:, None]
    return np.exp(-(times[None, :] - centers) ** 2 / (2 * cfg.width ** 2))


@dataclasses.dataclass(frozen=True, eq=False)
class PulseParams:
    ax: np.ndarray
    ay: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ax", np.array(self.ax, dtype=float).reshape(-1))
        object.__setattr__(self, "ay", np.array(self.ay, dtype=float).reshape(-1))
        if self.ax.shape != self.ay.shape:
            raise ConfigError("x and y amplitude vectors differ in length")

    def as_array(self) -> np.ndarray:
        return np.stack([self.ax, self.ay])

    @classmethod
    def from_array(cls, amplitudes) -> "PulseParams":
        amplitudes = np.asarray(amplitudes, dtype=float)
        return cls(amplitudes[0], amplitudes[1])

    @classmethod
    def zeros(cls, n=PULSES_PER_AXIS) -> "PulseParams":
        return cls(np.zeros(n), np.zeros(n))

    def __add__(self, other):
        return PulseParams(self.ax + other.ax, self.ay + other.ay)

    def __eq__(self, other):
        if not isinstance(other, PulseParams):
            return NotImplemented
        return np.array_equal(self.ax, other.ax) and np.array_equal(self.ay, other.ay)

    def check_bounds(self, cfg: PulseShapeConfig):
        if len(self.ax) != cfg.n_pulses:
            raise ConfigError(
                f"Expected {cfg.n_pulses} amplitudes per axis, got {len(self.ax)}"
            )
        peak = float(np.max(np.abs(self.as_array())))
        if peak > cfg.a_max:
            raise ConfigError(f"Amplitude {peak} exceeds the bound {cfg.a_max}")

    def to_dict(self):
        return {"ax": self.ax.tolist(), "ay": self.ay.tolist()}

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(data["ax"], data["ay"])
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Malformed pulse parameters: {e}") from e


def field_values(p: PulseParams, cfg: PulseShapeConfig) -> typing.Tuple[np.ndarray, np.ndarray]:
    """f_x and f_y at the M step midpoints."""
    p.check_bounds(cfg)
    fields = p.as_array() @ cfg.basis
    return fields[0], fields[1]


def field_at(p: PulseParams, cfg: PulseShapeConfig, times) -> typing.Tuple[np.ndarray, np.ndarray]:
    p.check_bounds(cfg)
    fields = p.as_array() @ gaussians(cfg, np.atleast_1d(times))
    return fields[0], fields[1]


def random_pulse_params(seed: int, cfg: PulseShapeConfig,
                        bound: typing.Optional[float] = None) -> PulseParams:
    bound = cfg.a_max if bound is None else min(bound, cfg.a_max)
    rng = np.random.default_rng(seed & SEED_MASK)
    return PulseParams.from_array(rng.uniform(-bound, bound, size=(2, cfg.n_pulses)))


def save_pulses(path, p: PulseParams, cfg: PulseShapeConfig, extra=None):
    document = p.to_dict()
    document["shape"] = cfg.to_dict()
    if extra:
        document.update(extra)
    save_json(path, document)


def load_pulses(path) -> typing.Tuple[PulseParams, PulseShapeConfig]:
    try:
        with open(path) as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Pulse file {path} is not valid JSON: {e}") from e
    cfg = PulseShapeConfig.from_dict(document["shape"]) if "shape" in document else PulseShapeConfig()
    p = PulseParams.from_dict(document)
    p.check_bounds(cfg)
    return p, cfg
