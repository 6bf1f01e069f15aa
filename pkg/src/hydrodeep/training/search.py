"""
Random hyperparameter search scored by validation NSE.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

from ..data.windows import WindowedSample
from ..metrics import nse
from ..network.arch import ArchSpec
from ..network.model import build_model, predict
from ..utils import run_parallel, spawn_seeds
from . import TrainConfig, train

LOG = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchSpace:
    """
    Hyperparameter ranges: log-uniform learning rate, categorical batch sizes
    and layer widths. Every trial trains for `iterations` epochs.
    """

    lr_range: Tuple[float, float] = (1e-4, 1e-2)
    batch_sizes: Tuple[int, ...] = (16, 32, 64)
    conv_choices: Tuple[str, ...] = ("16:3,32:3", "8:3,16:3", "16:2,32:2,32:2", "32:3")
    lstm_choices: Tuple[str, ...] = ("16", "32", "64", "32,32")
    target_units: Tuple[int, ...] = (4, 8, 16)
    head_choices: Tuple[str, ...] = ("32,1", "16,1", "64,32,1")
    trials: int = 20
    iterations: int = 30
    seed: int = 0

    def __post_init__(self) -> None:
        low, high = self.lr_range
        if not 0 < low <= high:
            raise ValueError(f"lr_range must satisfy 0 < low <= high, got {self.lr_range}")
        for name in ("batch_sizes", "conv_choices", "lstm_choices", "target_units", "head_choices"):
            if not getattr(self, name):
                raise ValueError(f"search space {name} is empty")
        if self.trials < 1:
            raise ValueError(f"search needs at least one trial, got {self.trials}")
        if self.iterations < 1:
            raise ValueError(f"trials need at least one iteration, got {self.iterations}")

    def draw(
        self, rng: np.random.Generator, base: TrainConfig
    ) -> Tuple[TrainConfig, ArchSpec, int]:
        """
        Draw one configuration: (train config, architecture, model seed).
        """
        low, high = self.lr_range
        lr = float(math.exp(rng.uniform(math.log(low), math.log(high))))
        batch_size = int(self.batch_sizes[rng.integers(len(self.batch_sizes))])
        arch = ArchSpec.from_fields(
            {
                "conv": self.conv_choices[rng.integers(len(self.conv_choices))],
                "lstm": self.lstm_choices[rng.integers(len(self.lstm_choices))],
                "target_units": str(self.target_units[rng.integers(len(self.target_units))]),
                "head": self.head_choices[rng.integers(len(self.head_choices))],
            }
        )
        model_seed = int(rng.integers(0, 2**63))
        config = replace(
            base,
            iterations=self.iterations,
            lr=lr,
            batch_size=batch_size,
            seed=int(rng.integers(0, 2**63)),
            frozen=frozenset(),
        )
        return config, arch, model_seed


@dataclass(frozen=True)
class TrialRecord:
    """
    One search trial and its validation NSE.
    """

    trial: int
    nse: float
    config: TrainConfig
    arch: ArchSpec
    model_seed: int


@dataclass(frozen=True)
class SearchResult:
    """
    The winning trial and the full trial log.
    """

    best: TrialRecord
    trials: List[TrialRecord]

    @property
    def config(self) -> TrainConfig:
        """
        Train config of the winner.
        """
        return self.best.config

    @property
    def arch(self) -> ArchSpec:
        """
        Architecture of the winner.
        """
        return self.best.arch


def run_trial(
    space: SearchSpace,
    trial: int,
    seed: int,
    train_samples: Sequence[WindowedSample],
    validation_samples: Sequence[WindowedSample],
    base: TrainConfig,
) -> TrialRecord:
    """
    Draw, train and score a single trial.
    """
    config, arch, model_seed = space.draw(np.random.default_rng(seed), base)
    report = train(build_model(arch, model_seed), train_samples, config)
    labels = np.array([sample.label for sample in validation_samples])
    score = nse(labels, predict(report.model, list(validation_samples)))
    LOG.info("trial %d: nse %.4f (lr %.3g, batch %d)", trial, score, config.lr, config.batch_size)
    return TrialRecord(trial, score, config, arch, model_seed)


def random_search(
    space: SearchSpace,
    train_samples: Sequence[WindowedSample],
    validation_samples: Sequence[WindowedSample],
    base: TrainConfig = TrainConfig(),
    workers: int = 1,
) -> SearchResult:
    """
    Train `space.trials` random configurations and keep the one with the
    highest validation NSE (the earliest on ties). Trial seeds are split
    from `space.seed` up front, so the log is the same for any `workers`.
    """
    if not train_samples or not validation_samples:
        raise ValueError("random_search needs train and validation samples")
    seeds = spawn_seeds(space.seed, space.trials)
    jobs = [
        lambda trial=trial, seed=seed: run_trial(
            space, trial, seed, train_samples, validation_samples, base
        )
        for trial, seed in enumerate(seeds, start=1)
    ]
    records = run_parallel(jobs, workers)
    best = max(records, key=lambda record: (record.nse, -record.trial))
    return SearchResult(best, records)
