"""
Tests for the random hyperparameter search.
"""

import numpy as np
import pytest

from hydrodeep.training import TrainConfig
from hydrodeep.training.search import SearchSpace, random_search

TINY_SPACE = SearchSpace(
    lr_range=(1e-3, 1e-2),
    batch_sizes=(8, 16),
    conv_choices=("3:2", "2:3"),
    lstm_choices=("3",),
    target_units=(2,),
    head_choices=("4,1",),
    trials=3,
    iterations=1,
    seed=5,
)


def test_search_space_validation():
    with pytest.raises(ValueError):
        SearchSpace(lr_range=(1e-2, 1e-3))
    with pytest.raises(ValueError):
        SearchSpace(lr_range=(0.0, 1e-3))
    with pytest.raises(ValueError):
        SearchSpace(batch_sizes=())
    with pytest.raises(ValueError):
        SearchSpace(trials=0)
    with pytest.raises(ValueError):
        SearchSpace(iterations=0)


def test_draw():
    base = TrainConfig(beta1=0.8, frozen={"conv"})
    first = TINY_SPACE.draw(np.random.default_rng(1), base)
    assert first == TINY_SPACE.draw(np.random.default_rng(1), base)
    config, arch, model_seed = first
    assert 1e-3 <= config.lr <= 1e-2
    assert config.batch_size in (8, 16)
    assert config.iterations == 1
    assert config.beta1 == 0.8
    assert config.frozen == frozenset()
    assert arch.lstm_layers == (3,)
    assert str(arch.conv_layers[0]) in ("3:2", "2:3")
    assert model_seed >= 0


def test_draw_covers_the_lr_range():
    rng = np.random.default_rng(2)
    rates = [TINY_SPACE.draw(rng, TrainConfig())[0].lr for _ in range(200)]
    assert min(rates) >= 1e-3 and max(rates) <= 1e-2
    # Log-uniform: about half the draws fall below the geometric midpoint.
    below = sum(rate < np.sqrt(1e-5) for rate in rates)
    assert 60 < below < 140


def test_random_search(small_prepared):
    fit = small_prepared.samples["fit"]
    validation = small_prepared.samples["validation"]
    result = random_search(TINY_SPACE, fit, validation)
    assert [record.trial for record in result.trials] == [1, 2, 3]
    assert result.best.nse == max(record.nse for record in result.trials)
    assert result.config is result.best.config
    assert result.arch is result.best.arch
    assert all(record.nse <= 1.0 for record in result.trials)


def test_random_search_ignores_the_worker_count(small_prepared):
    fit = small_prepared.samples["fit"]
    validation = small_prepared.samples["validation"]
    serial = random_search(TINY_SPACE, fit, validation, workers=1)
    threaded = random_search(TINY_SPACE, fit, validation, workers=2)
    assert [record.nse for record in serial.trials] == [record.nse for record in threaded.trials]
    assert [record.model_seed for record in serial.trials] == [
        record.model_seed for record in threaded.trials
    ]
    assert serial.best.trial == threaded.best.trial


def test_random_search_needs_samples(small_prepared):
    with pytest.raises(ValueError):
        random_search(TINY_SPACE, small_prepared.samples["fit"], [])
