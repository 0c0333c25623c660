"""
Supervised training of the greybox model (Adam on the MSE over all gates),
plus weight checkpoints and the training history.
"""

import collections
import copy
import dataclasses
import json
import math
import time
import typing

import numpy as np
import torch

from . import qcore
from .artifacts import dump_json, format_csv, save_text
from .control import PulseShapeConfig
from .exceptions import ConfigError, NumericError, SchemaError, VersionError
from .greybox import DTYPE, GreyboxConfig, GreyboxModel, as_amplitudes
from .labels import get_gate
from .logging import logger
from .noise import rng_stream

CHECKPOINT_VERSION = 1
DIVERGENCE_FACTOR = 1e3
# lower bound on the initial loss used by the divergence check
DIVERGENCE_FLOOR = 1e-8
EVAL_BATCH = 256


@dataclasses.dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_mse: float
    test_mse: float
    wall_time: float
    gate_mse: typing.Tuple[float, ...] = ()


def as_tensors(samples):
    if not samples:
        raise ConfigError("Empty sample set")
    amplitudes = as_amplitudes([s.params for s in samples])
    labels = torch.as_tensor(np.stack([s.fidelities for s in samples]), dtype=DTYPE)
    return amplitudes, labels


def _check_finite(per_sample, indices=None):
    bad = ~torch.isfinite(per_sample)
    if bool(bad.any()):
        position = int(torch.nonzero(bad)[0, 0])
        index = position if indices is None else int(indices[position])
        raise NumericError(f"Non-finite loss for sample {index}")


def loss_and_gradients(batch, model):
    """Mean squared error over samples and gates and its gradient for every weight."""
    amplitudes, labels = as_tensors(batch)
    model.zero_grad(set_to_none=False)
    per_sample = ((model(amplitudes) - labels) ** 2).mean(dim=-1)
    _check_finite(per_sample)
    loss = per_sample.mean()
    loss.backward()
    grads = collections.OrderedDict(
        (name, p.grad.detach().clone()) for name, p in model.named_parameters()
    )
    return loss.item(), grads


def evaluate(model, amplitudes, labels):
    """Overall and per-gate MSE without building a graph."""
    if len(labels) == 0:
        return math.nan, tuple(math.nan for _ in model.gates)
    squared = []
    with torch.no_grad():
        for start in range(0, len(labels), EVAL_BATCH):
            chunk = slice(start, start + EVAL_BATCH)
            squared.append((model(amplitudes[chunk]) - labels[chunk]) ** 2)
    squared = torch.cat(squared)
    return float(squared.mean()), tuple(float(v) for v in squared.mean(dim=0))


@dataclasses.dataclass
class TrainState:
    """Everything needed to continue training bit-exactly."""
    epoch: int
    best_weights: typing.Dict[str, torch.Tensor]
    best_test_mse: float
    initial_train_mse: float
    history: typing.List[EpochRecord]
    optimizer: typing.Optional[dict] = None


def make_optimizer(model):
    cfg = model.cfg
    return torch.optim.Adam(
        model.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps
    )


def train(model, train_set, test_set, resume=None, deterministic=False, epoch_callback=None):
    """Adam on mini-batches; returns the state holding the best-test-MSE weights.

    The model is left holding the last weights; `state.best_weights` has the
    weights with the lowest test MSE (lowest train MSE if there is no test set).
    """
    cfg = model.cfg
    train_x, train_y = as_tensors(train_set)
    if test_set:
        test_x, test_y = as_tensors(test_set)
    else:
        test_x, test_y = train_x[:0], train_y[:0]

    optimizer = make_optimizer(model)
    if resume is None:
        initial, _ = evaluate(model, train_x, train_y)
        if not math.isfinite(initial):
            raise NumericError("Non-finite training loss before the first epoch")
        state = TrainState(0, copy.deepcopy(model.state_dict()), math.inf, initial, [])
    else:
        state = resume
        if state.optimizer is not None:
            optimizer.load_state_dict(state.optimizer)

    started = time.monotonic()
    for epoch in range(state.epoch, cfg.epochs):
        order = rng_stream(cfg.seed, epoch).permutation(len(train_set))
        for start in range(0, len(order), cfg.batch_size):
            indices = order[start:start + cfg.batch_size]
            optimizer.zero_grad()
            per_sample = ((model(train_x[indices]) - train_y[indices]) ** 2).mean(dim=-1)
            _check_finite(per_sample, indices)
            per_sample.mean().backward()
            optimizer.step()

        train_mse, _ = evaluate(model, train_x, train_y)
        test_mse, gate_mse = evaluate(model, test_x, test_y)
        limit = DIVERGENCE_FACTOR * max(state.initial_train_mse, DIVERGENCE_FLOOR)
        if not math.isfinite(train_mse) or train_mse > limit:
            raise NumericError(
                f"Training diverged at epoch {epoch + 1}: train mse {train_mse:.3e} "
                f"(initial {state.initial_train_mse:.3e}, lr {cfg.learning_rate})"
            )

        wall_time = 0.0 if deterministic else time.monotonic() - started
        record = EpochRecord(epoch + 1, train_mse, test_mse, wall_time, gate_mse)
        state.history.append(record)
        logger.log_epoch(record.epoch, train_mse, test_mse)

        score = test_mse if test_set else train_mse
        if score < state.best_test_mse:
            state.best_test_mse = score
            state.best_weights = copy.deepcopy(model.state_dict())
        state.epoch = epoch + 1
        state.optimizer = copy.deepcopy(optimizer.state_dict())
        if epoch_callback is not None:
            epoch_callback(state)

    return state


def history_rows(history):
    return [
        [r.epoch, r.train_mse, r.test_mse, r.wall_time] + list(r.gate_mse) for r in history
    ]


def save_history(path, history, gate_labels):
    columns = ["epoch", "train_mse", "test_mse", "wall_time"] + [f"mse_{g}" for g in gate_labels]
    save_text(path, format_csv(columns, history_rows(history)))


def _tensor_to_json(tensor):
    return {
        "dtype": str(tensor.dtype).replace("torch.", ""),
        "shape": list(tensor.shape),
        "data": [float(v) for v in tensor.detach().reshape(-1).tolist()],
    }


def _tensor_from_json(document):
    dtype = getattr(torch, document["dtype"])
    return torch.tensor(document["data"], dtype=dtype).reshape(document["shape"])


def _weights_to_json(weights):
    return {name: _tensor_to_json(t) for name, t in weights.items()}


def _weights_from_json(document):
    return collections.OrderedDict(
        (name, _tensor_from_json(t)) for name, t in document.items()
    )


def _optimizer_to_json(state):
    return {
        "param_groups": state["param_groups"],
        "state": {
            str(index): {key: _tensor_to_json(torch.as_tensor(value)) for key, value in slot.items()}
            for index, slot in state["state"].items()
        },
    }


def _optimizer_from_json(document):
    return {
        "param_groups": document["param_groups"],
        "state": {
            int(index): {key: _tensor_from_json(value) for key, value in slot.items()}
            for index, slot in document["state"].items()
        },
    }


def checkpoint_document(model, state, config=None, data_checksum=None):
    """Versioned JSON checkpoint: best weights, resume state and provenance."""
    return {
        "version": CHECKPOINT_VERSION,
        "model": model.cfg.to_dict(),
        "shape": model.shape.to_dict(),
        "gates": [g.label for g in model.gates],
        "weights": _weights_to_json(state.best_weights),
        "best_test_mse": state.best_test_mse,
        "resume": {
            "epoch": state.epoch,
            "weights": _weights_to_json(model.state_dict()),
            "optimizer": _optimizer_to_json(state.optimizer) if state.optimizer else None,
            "initial_train_mse": state.initial_train_mse,
            "history": [dataclasses.asdict(r) for r in state.history],
        },
        "config": config,
        "data_checksum": data_checksum,
    }


def save_checkpoint(path, model, state, config=None, data_checksum=None):
    save_text(path, dump_json(checkpoint_document(model, state, config, data_checksum)))


def load_checkpoint(path):
    """Returns (model holding the last weights, train state, raw document).

    `best_model(model, state)` gives the best-test-MSE weights.
    """
    with open(path) as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"Checkpoint {path} is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise SchemaError(f"Checkpoint {path} is not a JSON object")
    if document.get("version") != CHECKPOINT_VERSION:
        raise VersionError(f"Unsupported checkpoint version {document.get('version')}")
    try:
        return _checkpoint_from_json(document)
    except (KeyError, TypeError, ValueError, AttributeError, RuntimeError) as e:
        raise SchemaError(f"Checkpoint {path} is malformed: {e!r}") from e


def _checkpoint_from_json(document):
    model = GreyboxModel(
        GreyboxConfig.from_dict(document["model"]),
        PulseShapeConfig.from_dict(document["shape"]),
        qcore.gate_targets(get_gate(label) for label in document["gates"]),
    )
    resume = document["resume"]
    model.load_state_dict(_weights_from_json(resume["weights"]))
    state = TrainState(
        epoch=resume["epoch"],
        best_weights=_weights_from_json(document["weights"]),
        best_test_mse=document["best_test_mse"],
        initial_train_mse=resume["initial_train_mse"],
        history=[
            EpochRecord(**{**r, "gate_mse": tuple(r["gate_mse"])}) for r in resume["history"]
        ],
        optimizer=_optimizer_from_json(resume["optimizer"]) if resume["optimizer"] else None,
    )
    return model, state, document


def best_model(model, state):
    best = copy.deepcopy(model)
    best.load_state_dict(state.best_weights)
    return best
