import csv
import json
import math
import pathlib
import re

import pytest

from qgreybox import __version__
from qgreybox import pipeline as pipeline_module
from qgreybox.__main__ import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, run
from qgreybox.config import SEED_ENV
from qgreybox.exceptions import NumericError
from qgreybox.pipeline import Pipeline

SMALL = {
    "grid": {"steps": 128},
    "dataset": {"realizations": 4, "n_train": 8, "n_test": 2},
    "model": {"epochs": 1, "batch_size": 4},
    "optimize": {"restarts": 1, "iterations": 3},
    "verify": {"realizations": 4},
    "spectrum": {"trajectories": 64, "duration": 8.0, "steps": 256, "max_lag": 2.0},
    "sweep": {"g": [0.2, 1.0]},
}


@pytest.fixture(autouse=True)
def no_seed_variable(monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL))
    return str(path)


def cli(config_file, output, *args):
    command, *rest = args
    return run([command, "-q", "-c", config_file, "-o", str(output), *rest])


def read_csv(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_spectrum(config_file, tmp_path):
    assert cli(config_file, tmp_path / "a", "spectrum") == EXIT_OK
    rows = read_csv(tmp_path / "a" / "spectrum" / "acf.csv")
    assert float(rows[0]["tau"]) == 0.0
    assert float(rows[0]["acf"]) == pytest.approx(1.0)
    for row in rows:
        assert float(row["acf_theory"]) == pytest.approx(math.exp(-2 * float(row["tau"])))

    psd = read_csv(tmp_path / "a" / "spectrum" / "psd.csv")
    assert float(psd[0]["psd_theory"]) == pytest.approx(1.0)
    summary = json.loads((tmp_path / "a" / "spectrum" / "summary.json").read_text())
    assert summary["decay_rate_theory"] == 2.0
    assert summary["trajectories"] == 64
    assert (tmp_path / "a" / "spectrum" / "resolved_config.json").exists()


def test_spectrum_is_reproducible(config_file, tmp_path):
    for name in ("a", "b"):
        assert cli(config_file, tmp_path / name, "spectrum", "--noise", "ou") == EXIT_OK
    for name in ("acf.csv", "psd.csv", "summary.json"):
        first = (tmp_path / "a" / "spectrum" / name).read_text()
        second = (tmp_path / "b" / "spectrum" / name).read_text()
        if name == "summary.json":
            first, second = json.loads(first), json.loads(second)
            first["config"].pop("output_dir")
            second["config"].pop("output_dir")
        assert first == second


def test_full_pipeline(config_file, tmp_path):
    out = tmp_path / "run"
    assert cli(config_file, out, "gen-data", "-g", "0.5") == EXIT_OK
    assert (out / "dataset" / "meta.json").exists()
    assert cli(config_file, out, "train") == EXIT_OK
    checkpoint = json.loads((out / "checkpoint.json").read_text())
    assert checkpoint["config"]["noise"]["g"] == 0.5
    assert len(read_csv(out / "history.csv")) == 1

    assert cli(config_file, out, "optimize", "-g", "0.5", "--gate", "Rx90") == EXIT_OK
    report = json.loads((out / "optimize" / "Rx90.json").read_text())
    assert 0 <= report["verified"] <= 1
    assert len(read_csv(out / "optimize" / "Rx90-trace.csv")) >= 1

    pulses = str(out / "optimize" / "Rx90-pulses.json")
    assert cli(config_file, out, "verify", pulses, "-g", "0.5",
               "-m", str(out / "checkpoint.json")) == EXIT_OK
    document = json.loads((out / "verify" / "Rx90-pulses.json").read_text())
    rows = {row["gate"]: row for row in document["gates"]}
    assert len(rows) == 6
    assert rows["Rx90"]["verified"] == pytest.approx(report["verified"])
    assert rows["Rx90"]["gap"] == pytest.approx(rows["Rx90"]["predicted"] - report["verified"])


def test_optimize_all_gates(config_file, tmp_path):
    out = tmp_path / "run"
    assert cli(config_file, out, "gen-data") == EXIT_OK
    assert cli(config_file, out, "train") == EXIT_OK
    assert cli(config_file, out, "optimize", "--all-gates") == EXIT_OK
    for label in ("I", "Rx90", "Ry90", "Rx180", "Ry180", "H"):
        assert (out / "optimize" / f"{label}-pulses.json").exists()


def test_thread_pool_writes_identical_dataset(config_file, tmp_path):
    assert cli(config_file, tmp_path / "one", "gen-data") == EXIT_OK
    assert cli(config_file, tmp_path / "pool", "gen-data", "--threads", "4") == EXIT_OK
    meta = json.loads((tmp_path / "pool" / "dataset" / "meta.json").read_text())
    assert meta["config"]["threads"] == 4
    assert meta["config"]["deterministic"] is False
    for name in ("train.csv", "test.csv"):
        first = (tmp_path / "one" / "dataset" / name).read_bytes()
        assert (tmp_path / "pool" / "dataset" / name).read_bytes() == first


def test_dataset_is_not_overwritten(config_file, tmp_path):
    assert cli(config_file, tmp_path, "gen-data") == EXIT_OK
    assert cli(config_file, tmp_path, "gen-data") == EXIT_IO
    assert cli(config_file, tmp_path, "gen-data", "--force") == EXIT_OK


def test_train_without_dataset(config_file, tmp_path):
    assert cli(config_file, tmp_path, "train") == EXIT_IO


def test_configuration_errors(config_file, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"noise": {"colour": "pink"}}))
    assert run(["spectrum", "-q", "-c", str(bad)]) == EXIT_CONFIG
    assert run(["spectrum", "-q", "-c", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    assert cli(config_file, tmp_path, "spectrum", "--gamma", "-1") == EXIT_CONFIG
    assert cli(config_file, tmp_path, "optimize", "--gate", "T") == EXIT_CONFIG


def test_numeric_failure_exit_code(config_file, tmp_path, monkeypatch):
    def fail(self):
        raise NumericError("diverged")
    monkeypatch.setattr(Pipeline, "spectrum", fail)
    assert cli(config_file, tmp_path, "spectrum") == EXIT_NUMERIC


def test_seed_variable_and_flag(config_file, tmp_path, monkeypatch):
    monkeypatch.setenv(SEED_ENV, "17")
    assert cli(config_file, tmp_path / "env", "spectrum") == EXIT_OK
    resolved = json.loads((tmp_path / "env" / "spectrum" / "resolved_config.json").read_text())
    assert resolved["seed"] == 17
    assert cli(config_file, tmp_path / "flag", "spectrum", "--seed", "3") == EXIT_OK
    resolved = json.loads((tmp_path / "flag" / "spectrum" / "resolved_config.json").read_text())
    assert resolved["seed"] == 3


def test_sweep(config_file, tmp_path):
    assert cli(config_file, tmp_path, "sweep") == EXIT_OK
    summary = tmp_path / "sweep" / "summary.csv"
    rows = read_csv(summary)
    assert len(rows) == 2 * 6
    assert {row["g"] for row in rows} == {"0.2", "1.0"}
    assert all(row["status"] == "ok" for row in rows)
    assert all(0 <= float(row["verified_f"]) <= 1 for row in rows)

    first = summary.read_bytes()
    assert cli(config_file, tmp_path, "sweep") == EXIT_OK
    assert summary.read_bytes() == first


def test_sweep_records_failed_point(config_file, tmp_path, monkeypatch):
    original = Pipeline.train

    def train(self, dataset=None, directory=None, resume=None):
        if "g-1.0" in str(directory):
            raise NumericError("diverged")
        return original(self, dataset, directory, resume)

    monkeypatch.setattr(Pipeline, "train", train)
    assert cli(config_file, tmp_path, "sweep") == EXIT_OK
    rows = read_csv(tmp_path / "sweep" / "summary.csv")
    failed = [row for row in rows if row["g"] == "1.0"]
    assert len(failed) == 6
    assert all(row["status"] == "failed: NumericError" for row in failed)
    assert all(row["verified_f"] == "nan" for row in failed)
    assert all(row["status"] == "ok" for row in rows if row["g"] == "0.2")


def test_sweep_records_io_failure(config_file, tmp_path, monkeypatch):
    original = Pipeline.optimize

    def optimize(self, *args, directory=None, **kwargs):
        if "g-0.2" in str(directory):
            raise PermissionError("read-only directory")
        return original(self, *args, directory=directory, **kwargs)

    monkeypatch.setattr(Pipeline, "optimize", optimize)
    assert cli(config_file, tmp_path, "sweep") == EXIT_OK
    rows = read_csv(tmp_path / "sweep" / "summary.csv")
    assert {row["status"] for row in rows if row["g"] == "0.2"} == {"failed: PermissionError"}
    assert all(row["status"] == "ok" for row in rows if row["g"] == "1.0")


def test_sweep_force_regenerates_datasets(config_file, tmp_path, monkeypatch):
    calls = []
    original = pipeline_module.generate_dataset

    def generate(meta, path, *args, **kwargs):
        calls.append(str(path))
        return original(meta, path, *args, **kwargs)

    monkeypatch.setattr(pipeline_module, "generate_dataset", generate)
    assert cli(config_file, tmp_path, "sweep") == EXIT_OK
    assert len(calls) == 2
    assert cli(config_file, tmp_path, "sweep") == EXIT_OK
    assert len(calls) == 2
    assert cli(config_file, tmp_path, "sweep", "--force") == EXIT_OK
    assert len(calls) == 4


@pytest.mark.slow
def test_default_sweep_bands(tmp_path):
    """Default setup: g in (0.2, 1, 2) with gamma = 1, verified at K = 10^4."""
    assert run(["sweep", "-q", "-o", str(tmp_path), "--threads", "4"]) == EXIT_OK
    rows = read_csv(tmp_path / "sweep" / "summary.csv")
    assert all(row["status"] == "ok" for row in rows)
    by_gate = {}
    for row in rows:
        by_gate.setdefault(row["gate"], []).append(
            (float(row["g"]), float(row["verified_f"]), float(row["stderr"]))
        )
    assert len(by_gate) == 6
    for gate, points in by_gate.items():
        points.sort()
        assert all(stderr < 2e-3 for _, _, stderr in points)
        assert points[0][1] > 0.99, gate
        assert points[-1][1] > 0.90, gate
        for (_, weak, weak_se), (_, strong, strong_se) in zip(points, points[1:]):
            assert strong <= weak + 2 * math.hypot(weak_se, strong_se), gate


def test_version_is_read_without_importing_package():
    root = pathlib.Path(__file__).resolve().parents[1]
    setup_text = (root / "setup.py").read_text()
    assert "import qgreybox" not in setup_text
    assert "from qgreybox" not in setup_text
    assert "re.search(" in setup_text
    init_text = (root / "qgreybox" / "__init__.py").read_text()
    version = re.search(r"^__version__ = ['\"](.+)['\"]$", init_text, re.MULTILINE).group(1)
    assert version == __version__
