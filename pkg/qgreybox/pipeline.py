import dataclasses
import hashlib
import math
import os

from . import qcore
from .artifacts import save_csv, save_json, save_text
from .control import load_pulses, save_pulses
from .dataset import META_FILE, generate_dataset, load_dataset
from .dynamics import CHUNK_SIZE
from .exceptions import ConfigError, DatasetError, NumericError
from .greybox import GreyboxModel, greybox_forward
from .logging import logger
from .noise import (
    AutocorrelationEstimator, PsdEstimator, fit_decay_rate, lorentzian_psd,
    psd_from_autocorrelation, sample_trajectories, theory_autocorrelation,
)
from .optctrl import optimize_pulses, verify_pulses
from .training import (
    best_model, load_checkpoint, save_checkpoint, save_history, train,
)

RESOLVED_CONFIG = "resolved_config.json"
DATASET_DIR = "dataset"
CHECKPOINT_FILE = "checkpoint.json"
HISTORY_FILE = "history.csv"
SWEEP_COLUMNS = [
    "g", "g_over_gamma", "gate", "test_mse", "predicted_f", "verified_f", "stderr", "status",
]


class Pipeline:
    """Runs the pipeline stages for one resolved config, writing into `output_dir`."""

    def __init__(self, config, output_dir=None):
        self.config = config
        self.output_dir = output_dir or config["output_dir"]
        self.execution = config.execution()

    def path(self, *parts):
        return os.path.join(self.output_dir, *parts)

    def save_config(self, directory=None):
        save_text(os.path.join(directory or self.output_dir, RESOLVED_CONFIG), self.config.dump())

    def spectrum(self):
        """Noise autocorrelation and spectrum estimated from many trajectories.

        Returns a summary with the fitted decay rate of the autocorrelation
        (2 gamma in theory).
        """
        spec = self.config.noise_spec()
        grid = self.config.spectrum_grid()
        count = self.config["spectrum"]["trajectories"]
        max_lag_steps = int(round(self.config["spectrum"]["max_lag"] / grid.dt))

        acf = AutocorrelationEstimator(grid, max_lag_steps)
        full_acf = AutocorrelationEstimator(grid, grid.steps - 1)
        psd = PsdEstimator(grid)
        logger.progress(
            f"Sampling {count} {spec.kind.value} trajectories (gamma={spec.gamma}, "
            f"T={grid.duration}, M={grid.steps})..."
        )
        for start in range(0, count, CHUNK_SIZE):
            batch = sample_trajectories(spec, grid, self.config.seed, start,
                                        min(CHUNK_SIZE, count - start))
            acf.update(batch)
            full_acf.update(batch)
            psd.update(batch)

        acf_table, psd_table = acf.result(), psd.result()
        wiener_khinchin = psd_from_autocorrelation(full_acf.result(), grid)
        acf_theory = theory_autocorrelation(spec.gamma, acf_table.x)
        psd_theory = lorentzian_psd(spec.gamma, psd_table.x)

        directory = self.path("spectrum")
        save_csv(
            os.path.join(directory, "acf.csv"),
            ["tau", "acf", "stderr", "acf_theory"],
            zip(acf_table.x.tolist(), acf_table.values.tolist(), acf_table.stderr.tolist(),
                acf_theory.tolist()),
        )
        save_csv(
            os.path.join(directory, "psd.csv"),
            ["omega", "psd", "stderr", "psd_theory", "psd_from_acf"],
            zip(psd_table.x.tolist(), psd_table.values.tolist(), psd_table.stderr.tolist(),
                psd_theory.tolist(), wiener_khinchin.tolist()),
        )
        rate = fit_decay_rate(acf_table)
        summary = {
            "noise": spec.to_dict(),
            "trajectories": count,
            "decay_rate": rate,
            "decay_rate_theory": 2 * spec.gamma,
            "seed": self.config.seed,
            "config": self.config.document(),
        }
        save_json(os.path.join(directory, "summary.json"), summary)
        self.save_config(directory)
        logger.output(
            f"Autocorrelation decay rate {rate:.4f} (theory {2 * spec.gamma:.4f})"
        )
        return summary

    def gen_data(self, g=None, path=None, force=False, reuse=False):
        meta = self.config.dataset_meta(g)
        path = path or self.path(DATASET_DIR)
        if reuse and not force and os.path.exists(os.path.join(path, META_FILE)):
            try:
                splits, existing = load_dataset(path)
            except DatasetError as e:
                logger.warning(f"Existing dataset in {path} is unusable ({e}), regenerating")
            else:
                if existing == meta:
                    logger.info(f"Reusing dataset in {path}")
                    return splits
                logger.debug(f"Dataset in {path} was made with another setup")
            force = True
        splits = generate_dataset(
            meta, path, self.execution, force=force, config=self.config.document()
        )
        logger.info(f"Dataset with {len(splits.train)}/{len(splits.test)} samples in {path}")
        return splits

    def train(self, dataset=None, directory=None, resume=None):
        """Trains a fresh model (or continues `resume`) and returns the best one."""
        dataset = dataset or self.path(DATASET_DIR)
        directory = directory or self.output_dir
        splits, meta = load_dataset(dataset)
        with open(os.path.join(dataset, META_FILE), "rb") as f:
            data_checksum = hashlib.sha256(f.read()).hexdigest()

        config = self.config.document()
        config["noise"] = {**config["noise"], **meta.noise.to_dict()}
        checkpoint_path = os.path.join(directory, CHECKPOINT_FILE)

        if resume is not None:
            model, state, _ = load_checkpoint(resume)
            if model.cfg.epochs != self.config["model"]["epochs"]:
                model.cfg = dataclasses.replace(model.cfg, epochs=self.config["model"]["epochs"])
            logger.progress(f"Resuming training at epoch {state.epoch + 1}")
        else:
            model = self._new_model(meta)
            state = None

        logger.progress(
            f"Training greybox model ({model.parameter_count()} parameters) on "
            f"{len(splits.train)} samples for {model.cfg.epochs} epochs..."
        )

        def checkpoint(state):
            save_checkpoint(checkpoint_path, model, state, config, data_checksum)

        state = train(
            model, splits.train, splits.test, resume=state,
            deterministic=self.execution.deterministic, epoch_callback=checkpoint,
        )
        checkpoint(state)
        gates = [t.label for t in model.gates]
        save_history(os.path.join(directory, HISTORY_FILE), state.history, gates)
        self.save_config(directory)
        if state.history:
            last = state.history[-1]
            logger.info(
                f"Final train mse {last.train_mse:.3e}, test mse {last.test_mse:.3e}, "
                f"best test mse {state.best_test_mse:.3e}"
            )
        return best_model(model, state), state

    def _new_model(self, meta):
        cfg = self.config.greybox_config()
        if cfg.n_tokens != meta.shape.n_pulses:
            raise ConfigError("Dataset pulse layout does not match the model config")
        return GreyboxModel(cfg, meta.shape, qcore.gate_targets(meta.gates))

    def load_model(self, checkpoint=None):
        checkpoint = checkpoint or self.path(CHECKPOINT_FILE)
        model, state, document = load_checkpoint(checkpoint)
        recorded = (document.get("config") or {}).get("noise")
        spec = self.config.noise_spec()
        if recorded and recorded != spec.to_dict():
            logger.warning(
                f"Model was trained on noise {recorded}, verifying against {spec.to_dict()}"
            )
        return best_model(model, state), state

    def optimize(self, checkpoint=None, gates=None, model=None, g=None, directory=None):
        """Designs pulses for each gate and writes report, pulses and trace."""
        if model is None:
            model, _ = self.load_model(checkpoint)
        spec = self.config.noise_spec(g)
        directory = directory or self.path("optimize")
        gates = gates or [self.config["optimize"]["gate"]]

        reports = []
        for label in gates:
            cfg = self.config.optimize_config(label)
            target = model.gates[model.gate_index(cfg.gate)]
            logger.progress(f"Optimizing pulses for {target.label} ({cfg.restarts} restarts)...")
            report = optimize_pulses(
                model, target, cfg, spec, self.config["verify"]["realizations"],
                self.config.verify_seed, self.execution,
            )
            self._save_report(report, model, directory)
            logger.output(
                f"{target.label}: predicted {report.predicted:.5f}, verified "
                f"{report.verified:.5f} +- {report.verified_stderr:.5f}"
            )
            reports.append(report)
        self.save_config(directory)
        return reports

    def _save_report(self, report, model, directory):
        stem = report.gate.value
        trace_path = os.path.join(directory, f"{stem}-trace.csv")
        pulses_path = os.path.join(directory, f"{stem}-pulses.json")
        save_csv(trace_path, ["restart", "iteration", "predicted_f", "step_size"],
                 report.trace_rows())
        save_pulses(pulses_path, report.params, model.shape, {"gate": stem})
        document = report.to_dict()
        document.update({
            "trace": os.path.basename(trace_path),
            "seed": self.config.seed,
            "config": self.config.document(),
        })
        save_json(os.path.join(directory, f"{stem}.json"), document)

    def verify(self, pulses_path, checkpoint=None):
        """Simulator fidelities of a pulse file for every configured gate.

        With a checkpoint the emulator prediction and the gap are reported too.
        """
        params, shape = load_pulses(pulses_path)
        targets = self.config.gate_targets()
        spec = self.config.noise_spec()
        realizations = self.config["verify"]["realizations"]
        logger.progress(f"Verifying {pulses_path} with {realizations} realizations...")
        estimate = verify_pulses(
            params, spec, targets, realizations, self.config.verify_seed, shape, self.execution
        )

        predicted = None
        if checkpoint is not None:
            model, _ = self.load_model(checkpoint)
            if model.shape != shape:
                raise ConfigError("Pulse file and checkpoint use different pulse shapes")
            predictions = greybox_forward(params, model)
            predicted = {
                t.label: float(predictions[model.gate_index(t.gate)])
                for t in targets if t.gate in [m.gate for m in model.gates]
            }

        rows = []
        for i, target in enumerate(targets):
            line = f"{target.label:6s} verified {estimate.values[i]:.5f} +- {estimate.stderr[i]:.5f}"
            row = {
                "gate": target.label,
                "verified": float(estimate.values[i]),
                "stderr": float(estimate.stderr[i]),
            }
            if predicted and target.label in predicted:
                row["predicted"] = predicted[target.label]
                row["gap"] = predicted[target.label] - row["verified"]
                line += f", predicted {row['predicted']:.5f} (gap {row['gap']:+.5f})"
            rows.append(row)
            logger.output(line)

        document = {
            "pulses": params.to_dict(),
            "noise": spec.to_dict(),
            "realizations": realizations,
            "gates": rows,
            "seed": self.config.seed,
            "config": self.config.document(),
        }
        stem = os.path.splitext(os.path.basename(pulses_path))[0]
        directory = self.path("verify")
        save_json(os.path.join(directory, f"{stem}.json"), document)
        self.save_config(directory)
        return document

    def sweep(self, force=False):
        """gen-data, train and optimize for every g; a failing g is recorded, not fatal."""
        gamma = self.config["noise"]["gamma"]
        gate_labels = [t.label for t in self.config.gate_targets()]
        rows = []
        for g in self.config["sweep"]["g"]:
            g = float(g)
            directory = self.path("sweep", f"g-{g!r}")
            logger.progress(f"Sweep point g = {g} (g/gamma = {g / gamma:.3g})")
            try:
                self.gen_data(g, os.path.join(directory, DATASET_DIR), force=force, reuse=True)
                model, state = self.train(os.path.join(directory, DATASET_DIR), directory)
                reports = self.optimize(model=model, gates=gate_labels, g=g,
                                        directory=os.path.join(directory, "optimize"))
            except (NumericError, DatasetError, ConfigError, OSError) as e:
                logger.error(f"Sweep point g = {g} failed: {e}")
                status = f"failed: {type(e).__name__}"
                rows.extend(
                    [g, g / gamma, label, math.nan, math.nan, math.nan, math.nan, status]
                    for label in gate_labels
                )
                continue
            for report in reports:
                rows.append([
                    g, g / gamma, report.gate.value, state.best_test_mse, report.predicted,
                    report.verified, report.verified_stderr, "ok",
                ])

        save_csv(self.path("sweep", "summary.csv"), SWEEP_COLUMNS, rows)
        self.save_config(self.path("sweep"))
        _log_summary(rows)
        return rows


def _log_summary(rows):
    logger.output("g        gate    test_mse   predicted  verified")
    for g, _, gate, mse, predicted, verified, stderr, status in rows:
        if status != "ok":
            logger.output(f"{g:<8g} {gate:7s} {status}")
            continue
        logger.output(
            f"{g:<8g} {gate:7s} {mse:.3e}  {predicted:.5f}    {verified:.5f} +- {stderr:.5f}"
        )
