"""
Tests for the architecture description and the dual-branch network.
"""

from dataclasses import replace

import numpy as np
import pytest

from hydrodeep.data import SampleBatch, WindowedSample, stack_samples
from hydrodeep.network import (
    ArchError,
    ArchSpec,
    ConvSpec,
    build_model,
    forward,
    forward_batch,
    group_of,
    model_grad_check,
    model_grad_check_suite,
    predict,
)
from hydrodeep.network.model import PREDICT_CHUNK, backward
from hydrodeep.nn import InvalidStateError


def random_batch(rng: np.random.Generator, size: int = 3, n_grids: int = 2) -> SampleBatch:
    return SampleBatch(
        history=rng.uniform(0.0, 1.0, (size, n_grids, 2, 7)),
        target_day=rng.uniform(0.0, 1.0, (size, n_grids, 2)),
        label=np.zeros(size),
    )


def test_default_param_count():
    arch = ArchSpec()
    # conv 112 + 1568, lstm 8320, target branch 24, head 1312 + 33
    assert arch.param_count == 11369
    assert build_model(arch, 0).param_count == 11369
    assert arch.conv_steps == 3
    assert arch.head_input == 40


def test_variant_dims(small_arch):
    cnn = small_arch.as_variant("cnn_only")
    assert cnn.lstm_layers == ()
    assert cnn.head_input == 4 * 5 + 2
    lstm = small_arch.as_variant("lstm_only")
    assert lstm.conv_layers == ()
    assert lstm.head_input == 3 + 2
    assert [layer.prefix for layer in lstm.layers()] == [
        "lstm.0",
        "target_branch",
        "head.0",
        "head.1",
    ]
    for arch in (small_arch, cnn, lstm):
        assert build_model(arch, 1).param_count == arch.param_count


def test_arch_text():
    arch = ArchSpec.from_text("conv = 8:3\nlstm = 5\n\ntarget_units = 4\nhead = 6,1\n")
    assert arch.conv_layers == (ConvSpec(8, 3),)
    assert arch.lstm_layers == (5,)
    assert arch.to_text() == (
        "conv = 8:3\nlstm = 5\ntarget_units = 4\nhead = 6,1\nvariant = hydrodeep\n"
    )
    assert ArchSpec.from_text(arch.to_text()) == arch
    # Missing keys take the default architecture's value.
    assert ArchSpec.from_fields({"lstm": "16"}).conv_layers == ArchSpec().conv_layers


@pytest.mark.parametrize(
    "fields",
    [
        {"head": "8,2"},
        {"conv": "4:4,4:5"},
        {"conv": "4:x"},
        {"variant": "transformer"},
        {"depth": "3"},
        {"lstm": "0"},
        {"conv": "", "variant": "hydrodeep"},
        {"variant": "cnn_only"},
    ],
)
def test_invalid_arch(fields):
    with pytest.raises(ArchError):
        ArchSpec.from_fields(fields)


def test_build_model_is_seeded(small_arch):
    first = build_model(small_arch, 4)
    second = build_model(small_arch, 4)
    other = build_model(small_arch, 5)
    assert all(np.array_equal(first.params[name], second.params[name]) for name in first.params)
    assert not np.array_equal(first.params["conv.0.kernel"], other.params["conv.0.kernel"])
    assert first.seed == 4


def test_initialization(small_arch):
    model = build_model(small_arch, 0)
    bias = model.params["lstm.0.bias"]
    assert np.all(bias[3:6] == 1.0)
    assert np.all(bias[:3] == 0.0) and np.all(bias[6:] == 0.0)
    assert np.all(model.params["head.0.bias"] == 0.0)
    weight = model.params["head.0.weight"]
    assert np.max(np.abs(weight)) <= np.sqrt(6.0 / (weight.shape[0] + weight.shape[1]))
    assert not model.params["conv.0.kernel"].flags.writeable


def test_groups(small_arch):
    model = build_model(small_arch, 0)
    assert sorted(model.group_tensors("conv")) == [
        "conv.0.bias",
        "conv.0.kernel",
        "conv.1.bias",
        "conv.1.kernel",
    ]
    assert list(model.group_tensors("target_branch")) == [
        "target_branch.weight",
        "target_branch.bias",
    ]
    assert model.group_of("head.1.bias") == "head"
    with pytest.raises(ValueError):
        model.group_tensors("decoder")
    with pytest.raises(ValueError):
        group_of("decoder.weight")
    with pytest.raises(KeyError):
        model.group_of("lstm.7.bias")


def test_replace_params(small_arch):
    model = build_model(small_arch, 0)
    updated = model.replace_params({"head.1.bias": [2.0]})
    assert updated.params["head.1.bias"][0] == 2.0
    assert model.params["head.1.bias"][0] == 0.0
    assert updated.params["conv.0.kernel"] is model.params["conv.0.kernel"]
    with pytest.raises(KeyError):
        model.replace_params({"head.9.bias": [1.0]})
    with pytest.raises(ValueError):
        model.replace_params({"head.1.bias": [1.0, 2.0]})


def test_forward_shapes(small_arch):
    rng = np.random.default_rng(0)
    for variant in ("hydrodeep", "cnn_only", "lstm_only"):
        model = build_model(small_arch.as_variant(variant), 2)
        predictions, _ = forward_batch(model, random_batch(rng, size=4, n_grids=3))
        assert predictions.shape == (4,)
        assert np.all(np.isfinite(predictions))


def test_any_grid_count(small_arch):
    model = build_model(small_arch, 3)
    rng = np.random.default_rng(1)
    for n_grids in (1, 5, 34):
        assert forward_batch(model, random_batch(rng, 2, n_grids))[0].shape == (2,)


def test_grid_order_and_duplication_do_not_matter(small_arch):
    model = build_model(small_arch, 3)
    batch = random_batch(np.random.default_rng(2), size=2, n_grids=4)
    base, _ = forward_batch(model, batch)
    order = [2, 0, 3, 1]
    shuffled = replace(
        batch, history=batch.history[:, order], target_day=batch.target_day[:, order]
    )
    assert np.allclose(forward_batch(model, shuffled)[0], base, rtol=0, atol=1e-12)
    doubled = replace(
        batch,
        history=np.concatenate([batch.history, batch.history], axis=1),
        target_day=np.concatenate([batch.target_day, batch.target_day], axis=1),
    )
    assert np.allclose(forward_batch(model, doubled)[0], base, rtol=0, atol=1e-12)


def test_forward_and_predict_agree(small_arch, small_prepared):
    model = build_model(small_arch, 5)
    samples = small_prepared.samples["train"]
    predictions = predict(model, samples)
    assert predictions.shape == (len(samples),)
    assert forward(model, samples[3]) == pytest.approx(predictions[3], abs=1e-12)
    batch, _ = forward_batch(model, stack_samples(samples[:10]))
    assert np.allclose(batch, predictions[:10], rtol=0, atol=1e-12)
    assert predict(model, []).shape == (0,)


def test_predict_in_chunks(small_arch, small_prepared):
    model = build_model(small_arch, 5)
    sample: WindowedSample = small_prepared.samples["test"][0]
    predictions = predict(model, [sample] * (PREDICT_CHUNK + 3))
    assert predictions.shape == (PREDICT_CHUNK + 3,)
    assert np.allclose(predictions, predictions[0], rtol=0, atol=1e-12)


def test_backward_needs_a_cache(small_arch):
    with pytest.raises(InvalidStateError):
        backward(build_model(small_arch, 0), None, np.ones(2))


@pytest.mark.parametrize("variant", ["hydrodeep", "cnn_only", "lstm_only"])
def test_model_grad_check(small_arch, variant):
    model = build_model(small_arch.as_variant(variant), 8)
    batch = random_batch(np.random.default_rng(9), size=2, n_grids=3)
    assert model_grad_check(model, batch) < 1e-4


def test_model_grad_check_detects_a_perturbed_gradient(small_arch):
    model = build_model(small_arch, 8)
    batch = random_batch(np.random.default_rng(10))

    def tamper(grads):
        # The output bias gradient is the batch size, never zero.
        return {**grads, "head.1.bias": grads["head.1.bias"] * 1.5}

    assert model_grad_check(model, batch, tamper=tamper) > 1e-2
    with pytest.raises(ValueError):
        model_grad_check(model, batch, epsilon=0.0)


def test_model_grad_check_suite_quick():
    results = model_grad_check_suite(n_configs=2, seed=3)
    assert sorted(results) == ["cnn_only", "hydrodeep", "lstm_only"]
    assert all(error < 1e-4 for error in results.values())


@pytest.mark.slow
def test_model_grad_check_suite_full():
    results = model_grad_check_suite(n_configs=100, seed=0)
    assert all(error < 1e-4 for error in results.values())
