import copy
import json
import os
import typing

from . import qcore
from .artifacts import dump_json
from .control import PulseShapeConfig
from .dataset import DatasetMeta
from .dynamics import Execution
from .exceptions import ConfigError
from .greybox import GreyboxConfig
from .labels import get_gate, get_noise_kind
from .logging import logger
from .noise import NoiseSpec, TimeGrid, derive_seed
from .optctrl import OptimizeConfig

SEED_ENV = "GREYBOX_SEED"
VERIFY_TAG = 0xF1DE

DEFAULT_CONFIG = {
    "seed": 0,
    "output_dir": "greybox-out",
    "threads": 1,
    "deterministic": False,
    "noise": {
        "kind": "rtn",
        "gamma": 1.0,
        "g": 0.2,
    },
    "grid": {
        "duration": 1.0,
        "steps": 1024,
    },
    "pulses": {
        "centers": None,
        "width": None,
        "a_max": 100.0,
    },
    "gates": ["I", "Rx90", "Ry90", "Rx180", "Ry180", "H"],
    "dataset": {
        "realizations": 2000,
        "n_train": 4096,
        "n_test": 512,
    },
    "model": {
        "embed_dim": 16,
        "layers": 2,
        "heads": 2,
        "ff_dim": 32,
        "head_hidden": 32,
        "head_mode": "shared",
        "learning_rate": 1e-3,
        "beta1": 0.9,
        "beta2": 0.999,
        "eps": 1e-8,
        "batch_size": 32,
        "epochs": 200,
    },
    "optimize": {
        "gate": "I",
        "restarts": 8,
        "iterations": 300,
        "step_size": 2.0,
        "backtrack": 0.5,
        "min_step": 1e-6,
        "bound": None,
        "init_scale": 0.5,
        "zero_start": True,
    },
    "verify": {
        "realizations": 10000,
    },
    "spectrum": {
        "trajectories": 10000,
        "duration": 32.0,
        "steps": 4096,
        "max_lag": 4.0,
    },
    "sweep": {
        "g": [0.2, 1.0, 2.0],
    },
}

# types of options whose default is None
NULLABLE = {
    "pulses.centers": list,
    "pulses.width": float,
    "optimize.bound": float,
}


def _check_type(option, value, default):
    expected = NULLABLE.get(option, type(default))
    if value is None and option in NULLABLE:
        return value
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is int and isinstance(value, bool):
        raise ConfigError(f"Option '{option}' must be an integer, got {value!r}")
    if not isinstance(value, expected):
        raise ConfigError(
            f"Option '{option}' must be of type {expected.__name__}, got {value!r}"
        )
    return value


def _merge(target, update, prefix=""):
    for key, value in update.items():
        option = prefix + key
        if key not in target:
            raise ConfigError(f"Unknown config option '{option}'")
        default = target[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"Config section '{option}' must be an object")
            _merge(default, value, option + ".")
        else:
            target[key] = _check_type(option, value, default)


def _log_defaults(document, update, prefix=""):
    for key, value in document.items():
        option = prefix + key
        if key not in update:
            logger.debug(f"Config option '{option}' not set, using '{json.dumps(value)}'")
        elif isinstance(value, dict) and isinstance(update[key], dict):
            _log_defaults(value, update[key], option + ".")


class RunConfig(dict):
    """Resolved run configuration.

    Layers, lowest first: DEFAULT_CONFIG, the JSON file, GREYBOX_SEED and
    command-line overrides given as dotted option names ("noise.g").
    """

    def __init__(self, path=None, overrides=None, environ=None):
        super().__init__(copy.deepcopy(DEFAULT_CONFIG))
        environ = os.environ if environ is None else environ

        document = {}
        if path is not None:
            try:
                with open(path) as f:
                    document = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
            except OSError as e:
                raise ConfigError(f"Cannot read config file {path}: {e}") from e
            if not isinstance(document, dict):
                raise ConfigError(f"Config file {path} must contain a JSON object")
        _merge(self, document)
        _log_defaults(DEFAULT_CONFIG, document)

        if environ.get(SEED_ENV):
            try:
                self["seed"] = int(environ[SEED_ENV])
            except ValueError:
                raise ConfigError(
                    f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}"
                ) from None

        for option, value in (overrides or {}).items():
            if value is not None:
                self.set_option(option, value)

        self.validate()

    def set_option(self, option, value):
        *sections, key = option.split(".")
        update = {key: value}
        for section in reversed(sections):
            update = {section: update}
        _merge(self, update)

    def validate(self):
        """Builds every typed view once so bad values fail before any work starts."""
        if self["threads"] < 1:
            raise ConfigError("Option 'threads' must be at least 1")
        if not self["sweep"]["g"]:
            raise ConfigError("Option 'sweep.g' needs at least one coupling")
        for g in self["sweep"]["g"]:
            self.noise_spec(g)
        self.gate_targets()
        self.dataset_meta()
        self.greybox_config()
        self.optimize_config()
        self.spectrum_grid()
        if self["verify"]["realizations"] < 2:
            raise ConfigError("Option 'verify.realizations' must be at least 2")
        if self["spectrum"]["trajectories"] < 2:
            raise ConfigError("Option 'spectrum.trajectories' must be at least 2")

    def dump(self) -> str:
        return dump_json(dict(self))

    def document(self):
        """Plain-JSON copy, embedded into artifacts."""
        return json.loads(self.dump())

    @property
    def seed(self) -> int:
        return self["seed"]

    @property
    def verify_seed(self) -> int:
        return derive_seed(self.seed, VERIFY_TAG)

    def execution(self) -> Execution:
        return Execution(self["threads"], self["deterministic"])

    def noise_spec(self, g=None) -> NoiseSpec:
        noise = self["noise"]
        return NoiseSpec(
            get_noise_kind(noise["kind"]), noise["gamma"], noise["g"] if g is None else float(g)
        )

    def grid(self) -> TimeGrid:
        return TimeGrid(self["grid"]["duration"], self["grid"]["steps"])

    def spectrum_grid(self) -> TimeGrid:
        return TimeGrid(self["spectrum"]["duration"], self["spectrum"]["steps"])

    def shape_config(self) -> PulseShapeConfig:
        pulses = self["pulses"]
        centers = pulses["centers"]
        return PulseShapeConfig(
            self.grid(),
            None if centers is None else tuple(float(c) for c in centers),
            pulses["width"],
            pulses["a_max"],
        )

    def gates(self):
        if not self["gates"]:
            raise ConfigError("Option 'gates' needs at least one gate")
        return tuple(get_gate(label) for label in self["gates"])

    def gate_targets(self) -> typing.Tuple[qcore.GateTarget, ...]:
        return qcore.gate_targets(self.gates())

    def dataset_meta(self, g=None) -> DatasetMeta:
        dataset = self["dataset"]
        return DatasetMeta(
            noise=self.noise_spec(g),
            shape=self.shape_config(),
            gates=self.gates(),
            realizations=dataset["realizations"],
            seed=self.seed,
            n_train=dataset["n_train"],
            n_test=dataset["n_test"],
        )

    def greybox_config(self) -> GreyboxConfig:
        return GreyboxConfig(
            n_tokens=self.shape_config().n_pulses, seed=self.seed, **self["model"]
        )

    def optimize_config(self, gate=None) -> OptimizeConfig:
        options = dict(self["optimize"])
        configured = options.pop("gate")
        label = configured if gate is None else gate
        if options["bound"] is None:
            options["bound"] = self["pulses"]["a_max"]
        if options["bound"] > self["pulses"]["a_max"]:
            raise ConfigError(
                f"Option 'optimize.bound' ({options['bound']}) exceeds 'pulses.a_max' "
                f"({self['pulses']['a_max']})"
            )
        return OptimizeConfig(gate=get_gate(label), seed=self.seed, **options)
