"""
Synthetic datasets: pulse amplitudes labelled with simulated gate fidelities.

A dataset directory holds `train.csv`, `test.csv` and `meta.json`; the meta
file records everything needed to regenerate each sample plus a sha256 of
both CSV files.
"""

import concurrent.futures
import csv
import dataclasses
import hashlib
import json
import math
import os
import typing

import numpy as np

from . import qcore
from .artifacts import dump_json, format_csv, save_text
from .control import PulseParams, PulseShapeConfig, random_pulse_params
from .dynamics import SEQUENTIAL, gate_fidelities
from .exceptions import (
    ChecksumError, ConfigError, DatasetError, MissingMetaError, SchemaError, VersionError,
)
from .labels import DEFAULT_GATES, Gate
from .logging import logger
from .noise import NoiseSpec, derive_seed

FORMAT_VERSION = 1
META_FILE = "meta.json"
TRAIN_FILE = "train.csv"
TEST_FILE = "test.csv"
SPLIT_TAG = 0x5EED


@dataclasses.dataclass(frozen=True, eq=False)
class Sample:
    params: PulseParams
    fidelities: np.ndarray
    stderr: np.ndarray
    seed: int

    def __eq__(self, other):
        if not isinstance(other, Sample):
            return NotImplemented
        return (
            self.params == other.params
            and np.array_equal(self.fidelities, other.fidelities)
            and np.array_equal(self.stderr, other.stderr)
            and self.seed == other.seed
        )


@dataclasses.dataclass(frozen=True)
class DatasetMeta:
    noise: NoiseSpec
    shape: PulseShapeConfig = PulseShapeConfig()
    gates: typing.Tuple[Gate, ...] = DEFAULT_GATES
    realizations: int = 2000
    seed: int = 0
    n_train: int = 4096
    n_test: int = 512
    version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.realizations < 2:
            raise ConfigError("Datasets need at least 2 realizations per label")
        if self.n_train < 1 or self.n_test < 0:
            raise ConfigError("Dataset needs at least one training sample")
        if len(self.gates) == 0:
            raise ConfigError("Dataset needs at least one gate")

    @property
    def size(self) -> int:
        return self.n_train + self.n_test

    def to_dict(self):
        return {
            "version": self.version,
            "noise": self.noise.to_dict(),
            "shape": self.shape.to_dict(),
            "gates": [gate.value for gate in self.gates],
            "realizations": self.realizations,
            "seed": self.seed,
            "n_train": self.n_train,
            "n_test": self.n_test,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            noise=NoiseSpec.from_dict(data["noise"]),
            shape=PulseShapeConfig.from_dict(data["shape"]),
            gates=tuple(Gate(label) for label in data["gates"]),
            realizations=int(data["realizations"]),
            seed=int(data["seed"]),
            n_train=int(data["n_train"]),
            n_test=int(data["n_test"]),
            version=int(data["version"]),
        )


@dataclasses.dataclass(frozen=True, eq=False)
class Splits:
    train: typing.List[Sample]
    test: typing.List[Sample]


def header(meta):
    n = meta.shape.n_pulses
    k = len(meta.gates)
    return (
        [f"ax{i + 1}" for i in range(n)] + [f"ay{i + 1}" for i in range(n)]
        + [f"f{i + 1}" for i in range(k)] + [f"se{i + 1}" for i in range(k)] + ["seed"]
    )


def holdout_indices(meta):
    """Indices of the test split: the n_test samples with the smallest split hash."""
    hashes = [(derive_seed(meta.seed, index, SPLIT_TAG), index) for index in range(meta.size)]
    return frozenset(index for _, index in sorted(hashes)[:meta.n_test])


def make_sample(meta, index, targets, execution=SEQUENTIAL):
    params = random_pulse_params(meta.seed + index, meta.shape)
    label_seed = derive_seed(meta.seed, index)
    estimate = gate_fidelities(
        params, meta.noise, targets, meta.realizations, label_seed, meta.shape, execution
    )
    return Sample(params, estimate.values, estimate.stderr, label_seed)


def generate_dataset(meta, path, execution=SEQUENTIAL, force=False, config=None):
    if os.path.exists(os.path.join(path, META_FILE)) and not force:
        raise DatasetError(f"Dataset already exists in {path} (use --force to overwrite)")

    targets = qcore.gate_targets(meta.gates)
    logger.progress(
        f"Generating {meta.size} samples ({meta.noise.kind.value}, gamma={meta.noise.gamma}, "
        f"g={meta.noise.g}, K={meta.realizations})..."
    )

    samples = [None] * meta.size
    report_every = max(1, meta.size // 20)
    if execution.sequential:
        for index in range(meta.size):
            samples[index] = make_sample(meta, index, targets)
            if (index + 1) % report_every == 0:
                logger.progress(f"  {index + 1}/{meta.size} samples")
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=execution.threads) as pool:
            futures = {
                pool.submit(make_sample, meta, index, targets): index
                for index in range(meta.size)
            }
            for done, future in enumerate(concurrent.futures.as_completed(futures), 1):
                samples[futures[future]] = future.result()
                if done % report_every == 0:
                    logger.progress(f"  {done}/{meta.size} samples")

    in_test = holdout_indices(meta)
    splits = Splits(
        train=[s for i, s in enumerate(samples) if i not in in_test],
        test=[s for i, s in enumerate(samples) if i in in_test],
    )
    save_dataset(path, splits, meta, config=config)

    stderr = np.array([s.stderr for s in samples])
    logger.info(
        "Label standard error: mean {:.2e}, max {:.2e}".format(stderr.mean(), stderr.max())
    )
    return splits


def _row(sample):
    return (
        [float(v) for v in sample.params.ax] + [float(v) for v in sample.params.ay]
        + [float(v) for v in sample.fidelities] + [float(v) for v in sample.stderr]
        + [sample.seed]
    )


def _checksum(text):
    return hashlib.sha256(text.encode()).hexdigest()


def save_dataset(path, splits, meta, config=None):
    columns = header(meta)
    train_csv = format_csv(columns, (_row(s) for s in splits.train))
    test_csv = format_csv(columns, (_row(s) for s in splits.test))
    document = meta.to_dict()
    document["checksums"] = {TRAIN_FILE: _checksum(train_csv), TEST_FILE: _checksum(test_csv)}
    if config is not None:
        document["config"] = config

    save_text(os.path.join(path, TRAIN_FILE), train_csv)
    save_text(os.path.join(path, TEST_FILE), test_csv)
    # meta last: a dataset without meta is incomplete by definition
    save_text(os.path.join(path, META_FILE), dump_json(document))


def _parse_rows(text, meta, name):
    n = meta.shape.n_pulses
    k = len(meta.gates)
    reader = csv.reader(text.splitlines())
    try:
        first = next(reader)
    except StopIteration:
        raise SchemaError(f"{name} is empty") from None
    if first != header(meta):
        raise SchemaError(f"{name} has an unexpected header", row=0)

    samples = []
    for row_index, row in enumerate(reader, 1):
        try:
            if len(row) != 2 * n + 2 * k + 1:
                raise ValueError(f"expected {2 * n + 2 * k + 1} columns, got {len(row)}")
            values = [float(v) for v in row[:-1]]
            seed = int(row[-1])
        except ValueError as e:
            raise SchemaError(f"{name}: {e}", row=row_index) from e
        if not all(math.isfinite(v) for v in values):
            raise SchemaError(f"{name}: non-finite value", row=row_index)
        fidelities = np.array(values[2 * n:2 * n + k])
        if np.any(fidelities < 0) or np.any(fidelities > 1):
            raise SchemaError(f"{name}: fidelity label outside [0, 1]", row=row_index)
        params = PulseParams(values[:n], values[n:2 * n])
        try:
            params.check_bounds(meta.shape)
        except ConfigError as e:
            raise SchemaError(f"{name}: {e}", row=row_index) from e
        samples.append(Sample(params, fidelities, np.array(values[2 * n + k:]), seed))
    return samples


def load_dataset(path):
    meta_path = os.path.join(path, META_FILE)
    if not os.path.exists(meta_path):
        raise MissingMetaError(f"No {META_FILE} in {path}")
    try:
        with open(meta_path) as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{META_FILE} is not valid JSON: {e}") from e

    if document.get("version") != FORMAT_VERSION:
        raise VersionError(
            f"Unsupported dataset format version {document.get('version')} "
            f"(supported: {FORMAT_VERSION})"
        )
    try:
        meta = DatasetMeta.from_dict(document)
    except (KeyError, TypeError, ValueError, ConfigError) as e:
        raise SchemaError(f"Invalid {META_FILE}: {e}") from e

    parts = {}
    for name in (TRAIN_FILE, TEST_FILE):
        with open(os.path.join(path, name), newline="") as f:
            text = f.read()
        parts[name] = _parse_rows(text, meta, name)
        if _checksum(text) != document.get("checksums", {}).get(name):
            raise ChecksumError(f"{name} does not match the checksum in {META_FILE}")

    return Splits(parts[TRAIN_FILE], parts[TEST_FILE]), meta
