import dataclasses
import json
import warnings

import numpy as np
import pytest
import torch

from qgreybox import greybox
from qgreybox.control import PulseParams, PulseShapeConfig, random_pulse_params
from qgreybox.dataset import DatasetMeta, Sample, generate_dataset, load_dataset
from qgreybox.dynamics import gate_fidelities, monte_carlo_expectations
from qgreybox.exceptions import ConfigError, NumericError, SchemaError
from qgreybox.greybox import (
    DTYPE, GreyboxConfig, GreyboxModel, RefineHead, as_amplitudes, blackbox_forward,
    decode_noise_operators, evaluate_whitebox, greybox_forward,
)
from qgreybox.labels import NoiseKind
from qgreybox.noise import NoiseSpec
from qgreybox.training import (
    best_model, evaluate, load_checkpoint, loss_and_gradients, save_checkpoint, save_history,
    train,
)


def randomize(model, scale=0.3, seed=0):
    """Gives every weight (including the zero-initialized layers) a random value."""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(scale * torch.randn(p.shape, generator=generator, dtype=p.dtype))
    return model


@pytest.fixture
def model(small_shape, targets):
    return GreyboxModel(GreyboxConfig(epochs=3, batch_size=4), small_shape, targets)


def samples(shape, targets, count, seed=0, g=0.0, realizations=2):
    spec = NoiseSpec(NoiseKind.RTN, 1.0, g)
    out = []
    for i in range(count):
        p = random_pulse_params(seed + i, shape, bound=40.0)
        estimate = gate_fidelities(p, spec, targets, realizations, seed + i, shape)
        out.append(Sample(p, estimate.values, estimate.stderr, seed + i))
    return out


@pytest.mark.parametrize("kwargs", [
    {"embed_dim": 15, "heads": 2},
    {"layers": 0},
    {"token_features": 3},
    {"head_mode": "other"},
    {"epochs": -1},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigError):
        GreyboxConfig(**kwargs)


def test_model_rejects_mismatched_layout(targets):
    shape = PulseShapeConfig(centers=(0.25, 0.5, 0.75))
    with pytest.raises(ConfigError):
        GreyboxModel(GreyboxConfig(), shape, targets)


def test_zero_parameters_decode_to_identity():
    ops = decode_noise_operators(torch.zeros(greybox.N_NOISE_PARAMS, dtype=DTYPE))
    assert ops.shape == (3, 2, 2)
    assert torch.equal(ops, torch.eye(2, dtype=greybox.CDTYPE).expand(3, 2, 2))


def test_decoded_operators_are_bounded_and_hermitian():
    params = 3 * torch.randn(200, greybox.N_NOISE_PARAMS, dtype=DTYPE,
                             generator=torch.Generator().manual_seed(1))
    ops = decode_noise_operators(params)
    assert (ops - greybox.dagger(ops)).abs().max() < 1e-14
    assert torch.linalg.matrix_norm(ops, ord=2).max() <= 1 + 1e-12


def test_eigenvalue_kink_takes_right_derivative():
    """At d = 0 autograd follows the d >= 0 branch while central differences see zero."""
    def corner(params):
        return decode_noise_operators(params)[0, 0, 0].real

    params = torch.zeros(greybox.N_NOISE_PARAMS, dtype=DTYPE, requires_grad=True)
    corner(params).backward()
    assert params.grad[3].item() == pytest.approx(-2.0, abs=1e-12)
    assert params.grad[4].item() == 0.0
    assert params.grad[:3].abs().max().item() < 1e-12

    step = torch.zeros(greybox.N_NOISE_PARAMS, dtype=DTYPE)
    step[3] = 1e-6
    with torch.no_grad():
        central = (corner(step) - corner(-step)) / 2e-6
        forward = (corner(step) - corner(torch.zeros_like(step))) / 1e-6
    assert central.item() == 0.0
    assert forward.item() == pytest.approx(-2.0, rel=1e-5)


def test_identity_noise_reproduces_noiseless_simulator(small_shape):
    identity = np.broadcast_to(np.eye(2), (3, 2, 2))
    noiseless = NoiseSpec(NoiseKind.OU, 1.0, 0.0)
    for seed in range(5):
        p = random_pulse_params(seed, small_shape)
        expected = monte_carlo_expectations(p, noiseless, 2, 0, small_shape).expectations
        np.testing.assert_allclose(evaluate_whitebox(p, identity, small_shape), expected,
                                   atol=1e-12)


def test_whitebox_free_evolution(small_shape):
    identity = np.broadcast_to(np.eye(2), (3, 2, 2))
    e = evaluate_whitebox(PulseParams.zeros(), identity, small_shape)
    assert e[4, 2] == pytest.approx(1.0, abs=1e-15)
    # V_X = c I scales the x+ coherence by c
    e = evaluate_whitebox(PulseParams.zeros(), 0.8 * identity, small_shape)
    assert e[0, 0] == pytest.approx(0.8, abs=1e-14)


def test_refine_head_starts_as_identity():
    head = RefineHead(32)
    e = 2 * torch.rand(10, greybox.N_EXPECTATIONS, dtype=DTYPE) - 1
    assert torch.allclose(head(e), e, atol=1e-12, rtol=0)


def test_refine_head_output_is_bounded():
    head = randomize(RefineHead(8), scale=5.0)
    e = 2 * torch.rand(100, greybox.N_EXPECTATIONS, dtype=DTYPE) - 1
    out = head(e)
    assert out.abs().max() <= 1 + 1e-15


def test_fresh_model_is_the_noiseless_simulator(targets):
    """Identity at initialization holds on the full-resolution default grid."""
    shape = PulseShapeConfig()
    model = GreyboxModel(GreyboxConfig(), shape, targets)
    params = [random_pulse_params(100 + i, shape) for i in range(100)]
    predicted = model.predict(params)
    noiseless = NoiseSpec(NoiseKind.RTN, 1.0, 0.0)
    for p, row in zip(params, predicted):
        expected = gate_fidelities(p, noiseless, targets, 2, 0, shape).values
        np.testing.assert_allclose(row, expected, atol=1e-10)


def test_per_gate_heads_start_as_identity(small_shape, targets):
    cfg = GreyboxConfig(head_mode="per_gate")
    per_gate = GreyboxModel(cfg, small_shape, targets)
    shared = GreyboxModel(GreyboxConfig(), small_shape, targets)
    amps = as_amplitudes([random_pulse_params(i, small_shape) for i in range(4)])
    with torch.no_grad():
        assert torch.allclose(per_gate(amps), shared(amps), atol=1e-12, rtol=0)
    assert per_gate.parameter_count() > shared.parameter_count()


def test_blackbox_is_deterministic_and_order_sensitive(model, small_shape):
    randomize(model)
    p = random_pulse_params(3, small_shape)
    out = blackbox_forward(p, model)
    assert out.shape == (greybox.N_NOISE_PARAMS,)
    np.testing.assert_array_equal(out, blackbox_forward(p, model))

    swapped = p.as_array().copy()
    swapped[:, [0, 1]] = swapped[:, [1, 0]]
    assert not np.allclose(out, blackbox_forward(PulseParams.from_array(swapped), model))


def test_outputs_finite_at_amplitude_bounds(model, small_shape):
    randomize(model)
    corner = PulseParams(np.full(5, small_shape.a_max), np.full(5, -small_shape.a_max))
    assert np.isfinite(blackbox_forward(corner, model)).all()
    assert np.isfinite(greybox_forward(corner, model)).all()


def test_predictions_are_fidelities_for_any_weights(model, small_shape):
    randomize(model, scale=10.0, seed=4)
    predicted = model.predict([random_pulse_params(i, small_shape) for i in range(16)])
    assert predicted.shape == (16, 6)
    assert ((predicted >= 0) & (predicted <= 1)).all()


def test_predictions_do_not_depend_on_batch(model, small_shape):
    randomize(model)
    params = [random_pulse_params(i, small_shape) for i in range(5)]
    together = model.predict(params)
    for p, row in zip(params, together):
        np.testing.assert_allclose(model.predict([p])[0], row, atol=1e-12)


def test_loss_vanishes_on_own_predictions(model, small_shape, targets):
    randomize(model)
    params = [random_pulse_params(i, small_shape) for i in range(3)]
    batch = [Sample(p, f, np.zeros(6), 0) for p, f in zip(params, model.predict(params))]
    loss, grads = loss_and_gradients(batch, model)
    assert loss < 1e-28
    assert all(g.abs().max() < 1e-12 for g in grads.values())


def test_loss_is_read_without_warnings(model, small_shape, targets):
    randomize(model)
    batch = samples(small_shape, targets, 2, g=0.8, realizations=20)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        loss, _ = loss_and_gradients(batch, model)
    assert type(loss) is float


def test_gradients_cover_exactly_the_trainable_weights(model, small_shape, targets):
    loss, grads = loss_and_gradients(samples(small_shape, targets, 2), model)
    assert sum(g.numel() for g in grads.values()) == model.parameter_count()
    assert [name for name, _ in model.named_parameters()] == list(grads)
    assert all(not name.startswith(("basis", "targets")) for name in grads)


def test_duplicated_batch_has_same_loss_and_gradients(model, small_shape, targets):
    randomize(model)
    batch = samples(small_shape, targets, 2, g=0.8, realizations=20)
    loss, grads = loss_and_gradients(batch, model)
    loss2, grads2 = loss_and_gradients(batch + batch, model)
    assert loss2 == pytest.approx(loss, rel=1e-12)
    for name in grads:
        assert torch.allclose(grads[name], grads2[name], rtol=1e-10, atol=1e-15)


def test_weight_gradients_match_finite_differences(model, small_shape, targets):
    randomize(model, scale=0.2, seed=7)
    batch = samples(small_shape, targets, 2, g=0.8, realizations=20)
    _, grads = loss_and_gradients(batch, model)
    named = dict(model.named_parameters())
    names = list(named)
    generator = np.random.default_rng(3)
    step = 1e-5

    for _ in range(50):
        name = names[generator.integers(len(names))]
        index = tuple(int(generator.integers(n)) for n in named[name].shape)
        param = named[name]
        with torch.no_grad():
            original = param[index].item()
            param[index] = original + step
            plus, _ = loss_and_gradients(batch, model)
            param[index] = original - step
            minus, _ = loss_and_gradients(batch, model)
            param[index] = original
        numeric = (plus - minus) / (2 * step)
        analytic = grads[name][index].item()
        assert abs(analytic - numeric) <= 1e-4 * max(abs(analytic), abs(numeric)) + 1e-9, name


def test_amplitude_gradients_pass_gradcheck(model, small_shape):
    randomize(model, scale=0.2, seed=8)
    amps = as_amplitudes([random_pulse_params(1, small_shape, bound=30.0)]).requires_grad_()
    assert torch.autograd.gradcheck(model, (amps,), eps=1e-5, atol=1e-7, rtol=1e-4)


def test_whitebox_gradcheck(small_shape):
    basis = torch.as_tensor(np.array(small_shape.basis), dtype=DTYPE)
    amps = as_amplitudes([random_pulse_params(2, small_shape, bound=30.0)]).requires_grad_()
    params = (0.5 * torch.randn(1, greybox.N_NOISE_PARAMS, dtype=DTYPE,
                                generator=torch.Generator().manual_seed(2))).requires_grad_()

    def expectations(a, n):
        return greybox.whitebox_expectations(a, decode_noise_operators(n), basis,
                                             small_shape.grid.dt)

    assert torch.autograd.gradcheck(expectations, (amps, params), eps=1e-6, atol=1e-7)


def test_small_angle_step_gradcheck():
    fields = (1e-6 * torch.tensor([1.0, -2.0, 0.5], dtype=DTYPE)).requires_grad_()
    assert torch.autograd.gradcheck(
        lambda h: greybox.su2_step(h[0], h[1], h[2], 0.01), (fields,), eps=1e-8, atol=1e-9
    )


def test_non_finite_loss_names_the_sample(model, small_shape, targets):
    batch = samples(small_shape, targets, 3)
    batch[1] = Sample(batch[1].params, np.full(6, np.nan), batch[1].stderr, 0)
    with pytest.raises(NumericError, match="sample 1"):
        loss_and_gradients(batch, model)


def test_realizable_data_is_fit_exactly(model, small_shape, targets):
    data = samples(small_shape, targets, 32)
    state = train(model, data[:28], data[28:], deterministic=True)
    assert len(state.history) == 3
    assert state.history[-1].train_mse < 1e-6


def test_training_is_deterministic(small_shape, targets):
    data = samples(small_shape, targets, 12, g=1.0, realizations=20)
    cfg = GreyboxConfig(epochs=2, batch_size=4, learning_rate=1e-2)
    runs = [
        train(GreyboxModel(cfg, small_shape, targets), data[:8], data[8:], deterministic=True)
        for _ in range(2)
    ]
    assert runs[0].history == runs[1].history
    for name, tensor in runs[0].best_weights.items():
        assert torch.equal(tensor, runs[1].best_weights[name])


def test_best_weights_have_lowest_test_mse(small_shape, targets):
    data = samples(small_shape, targets, 12, g=1.0, realizations=20)
    model = GreyboxModel(GreyboxConfig(epochs=4, batch_size=4, learning_rate=1e-2),
                         small_shape, targets)
    state = train(model, data[:8], data[8:], deterministic=True)
    assert state.best_test_mse == min(r.test_mse for r in state.history)
    best = best_model(model, state)
    x, y = (as_amplitudes([s.params for s in data[8:]]),
            torch.as_tensor(np.stack([s.fidelities for s in data[8:]]), dtype=DTYPE))
    mse, per_gate = evaluate(best, x, y)
    assert mse == pytest.approx(state.best_test_mse, rel=1e-12)
    assert len(per_gate) == 6


def test_resume_reproduces_next_epoch(tmp_path, small_shape, targets):
    data = samples(small_shape, targets, 12, g=1.0, realizations=20)
    cfg = GreyboxConfig(epochs=3, batch_size=4, learning_rate=1e-2)
    straight = train(GreyboxModel(cfg, small_shape, targets), data[:8], data[8:],
                     deterministic=True)

    first = GreyboxModel(dataclasses.replace(cfg, epochs=2), small_shape, targets)
    state = train(first, data[:8], data[8:], deterministic=True)
    save_checkpoint(tmp_path / "ckpt.json", first, state, {"seed": 0}, "abc")

    resumed, resumed_state, document = load_checkpoint(tmp_path / "ckpt.json")
    assert document["data_checksum"] == "abc"
    resumed.cfg = cfg
    resumed_state = train(resumed, data[:8], data[8:], resume=resumed_state, deterministic=True)
    assert resumed_state.history == straight.history


def test_checkpoint_bytes_are_stable(tmp_path, model, small_shape, targets):
    data = samples(small_shape, targets, 8, g=1.0, realizations=20)
    state = train(model, data[:6], data[6:], deterministic=True)
    save_checkpoint(tmp_path / "a.json", model, state, {"seed": 0}, "abc")
    loaded, loaded_state, document = load_checkpoint(tmp_path / "a.json")
    save_checkpoint(tmp_path / "b.json", loaded, loaded_state, document["config"],
                    document["data_checksum"])
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    amps = as_amplitudes([s.params for s in data])
    with torch.no_grad():
        assert torch.equal(best_model(loaded, loaded_state)(amps), best_model(model, state)(amps))


@pytest.mark.parametrize("damage", [
    lambda d: d.pop("resume"),
    lambda d: d["resume"].update(weights=[]),
    lambda d: d["resume"]["weights"].popitem(),
    lambda d: d["model"].update(embed_dim="wide"),
    lambda d: d["resume"]["history"][0].update(extra=1),
])
def test_malformed_checkpoint(tmp_path, model, small_shape, targets, damage):
    data = samples(small_shape, targets, 4)
    state = train(model, data[:3], data[3:], deterministic=True)
    save_checkpoint(tmp_path / "ckpt.json", model, state)
    document = json.loads((tmp_path / "ckpt.json").read_text())
    damage(document)
    (tmp_path / "ckpt.json").write_text(json.dumps(document))
    with pytest.raises(SchemaError):
        load_checkpoint(tmp_path / "ckpt.json")


def test_checkpoint_must_be_an_object(tmp_path):
    (tmp_path / "ckpt.json").write_text("[1, 2]")
    with pytest.raises(SchemaError):
        load_checkpoint(tmp_path / "ckpt.json")


def test_history_file(tmp_path, model, small_shape, targets):
    data = samples(small_shape, targets, 8)
    state = train(model, data[:6], data[6:], deterministic=True)
    save_history(tmp_path / "history.csv", state.history, [t.label for t in targets])
    lines = (tmp_path / "history.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_mse,test_mse,wall_time,mse_I,mse_Rx90,mse_Ry90," \
                       "mse_Rx180,mse_Ry180,mse_H"
    assert len(lines) == 4
    assert lines[1].startswith("1,")


@pytest.mark.slow
def test_weak_coupling_training_band(tmp_path, targets):
    shape = PulseShapeConfig()
    meta = DatasetMeta(noise=NoiseSpec(NoiseKind.RTN, 1.0, 0.2), shape=shape,
                       realizations=500, n_train=1024, n_test=256)
    generate_dataset(meta, tmp_path / "data")
    splits, _ = load_dataset(tmp_path / "data")
    model = GreyboxModel(GreyboxConfig(epochs=60), shape, targets)
    state = train(model, splits.train, splits.test, deterministic=True)
    assert state.best_test_mse <= 1e-2
