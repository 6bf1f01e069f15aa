"""
Seeded mini-batch training of discharge models.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..data.windows import SampleBatch, WindowedSample, stack_samples
from ..network.arch import GROUPS
from ..network.model import Model, backward, forward_batch
from ..nn.tensor import ArrayLike, ShapeError
from ..utils import stopwatch
from .adam import AdamState, adam_step

LOG = logging.getLogger(__name__)

REPORT_COLUMNS = ["iteration", "loss"]

PathLike = Union[str, Path]


@dataclass(frozen=True)
class TrainConfig:
    """
    Training budget and optimizer settings.

    One iteration is one pass over every training sample in seeded shuffled
    mini-batches. `frozen` holds the parameter groups that receive no update.
    """

    iterations: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    frozen: FrozenSet[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"learning rate must be > 0, got {self.lr}")
        for name in ("beta1", "beta2"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must be in (0, 1), got {getattr(self, name)}")
        if not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        unknown = set(self.frozen) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups {sorted(unknown)}, expected {GROUPS}")
        object.__setattr__(self, "frozen", frozenset(self.frozen))

    def echo(self) -> Dict[str, str]:
        """
        The configuration as strings, for report summaries.
        """
        return {
            "iterations": str(self.iterations),
            "batch_size": str(self.batch_size),
            "lr": repr(self.lr),
            "beta1": repr(self.beta1),
            "beta2": repr(self.beta2),
            "eps": repr(self.eps),
            "seed": str(self.seed),
            "frozen": "|".join(group for group in GROUPS if group in self.frozen),
        }


@dataclass(eq=False)
class TrainReport:
    """
    Mean training loss of every iteration, wall time of the training loop,
    the trained model and the configuration used.
    """

    losses: List[float]
    wall_seconds: float
    model: Model
    config: TrainConfig

    @property
    def final_loss(self) -> Optional[float]:
        """
        Loss of the last iteration, None when nothing was trained.
        """
        return self.losses[-1] if self.losses else None


def mse_loss(predictions: ArrayLike, targets: ArrayLike) -> float:
    """
    Mean squared difference.
    """
    pred = np.asarray(predictions, dtype=np.float64)
    target = np.asarray(targets, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"predictions {pred.shape} and targets {target.shape} differ")
    if pred.size == 0:
        raise ValueError("mse_loss needs at least one value")
    return float(np.mean((pred - target) ** 2))


def _subset(batch: SampleBatch, indices: np.ndarray) -> SampleBatch:
    return SampleBatch(batch.history[indices], batch.target_day[indices], batch.label[indices])


def train(model: Model, samples: Sequence[WindowedSample], config: TrainConfig) -> TrainReport:
    """
    Minimize the MSE of `model` on `samples` with Adam.

    The result depends only on (model, samples, config). Wall time covers
    the training loop only.
    """
    if not samples:
        raise ValueError("train needs at least one sample")
    data = stack_samples(samples)
    rng = np.random.default_rng(config.seed)
    losses: List[float] = []
    params = dict(model.params)
    state = AdamState.zeros(params)
    step = 0
    with stopwatch() as watch:
        for iteration in range(config.iterations):
            order = rng.permutation(len(data))
            squared_errors = []
            for start in range(0, len(data), config.batch_size):
                batch = _subset(data, order[start : start + config.batch_size])
                current = model.replace_params(params) if step else model
                predictions, cache = forward_batch(current, batch)
                errors = predictions - batch.label
                squared_errors.append(math.fsum(errors**2))
                grads = backward(current, cache, 2.0 * errors / len(batch))
                step += 1
                params, state = adam_step(params, grads, state, config, step)
            losses.append(math.fsum(squared_errors) / len(data))
            LOG.debug("iteration %d/%d: loss %.6g", iteration + 1, config.iterations, losses[-1])
    trained = model.replace_params(params) if step else model
    LOG.info(
        "trained %d iterations on %d samples in %.2fs, final loss %s",
        config.iterations,
        len(data),
        watch.seconds,
        losses[-1] if losses else "n/a",
    )
    return TrainReport(losses, watch.seconds, trained, config)


def write_report_csv(
    report: TrainReport, path: PathLike, extra: Optional[Mapping[str, object]] = None
) -> Path:
    """
    Write `iteration,loss` rows followed by a `# key=value,...` summary line
    holding the wall time, the configuration echo and any `extra` values.
    """
    target = Path(path)
    frame = pd.DataFrame(
        {"iteration": np.arange(1, len(report.losses) + 1), "loss": report.losses},
        columns=REPORT_COLUMNS,
    )
    summary = {"wall_seconds": repr(report.wall_seconds), **report.config.echo()}
    for key, value in (extra or {}).items():
        summary[key] = repr(value) if isinstance(value, float) else str(value)
    with target.open("w", encoding="utf8", newline="") as handle:
        frame.to_csv(handle, index=False, lineterminator="\n")
        handle.write("# " + ",".join(f"{key}={value}" for key, value in summary.items()) + "\n")
    return target


@dataclass(frozen=True, eq=False)
class ReportFile:
    """
    A TrainReport read back from CSV.
    """

    losses: pd.DataFrame
    summary: Dict[str, str]


def read_report_csv(path: PathLike) -> ReportFile:
    """
    Read a file written by write_report_csv.
    """
    source = Path(path)
    summary: Dict[str, str] = {}
    for line in source.read_text(encoding="utf8").splitlines():
        if line.startswith("#"):
            for item in line[1:].strip().split(","):
                key, _, value = item.partition("=")
                summary[key.strip()] = value.strip()
    frame = pd.read_csv(source, comment="#")
    if list(frame.columns) != REPORT_COLUMNS:
        raise ValueError(f"{source}: not a training report (columns {list(frame.columns)})")
    return ReportFile(frame, summary)


__all__ = [
    "AdamState",
    "ReportFile",
    "TrainConfig",
    "TrainReport",
    "adam_step",
    "mse_loss",
    "read_report_csv",
    "train",
    "write_report_csv",
]
