"""
Evaluation metrics for discharge predictions.

Sums go through math.fsum, which rounds exactly once, so every metric is
independent of the order of the points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Tuple

import numpy as np

from .data.windows import NormStats, WindowedSample
from .network.model import Model, predict
from .nn.tensor import ArrayLike, ShapeError, Tensor


class MetricError(ValueError):
    """
    Raised when a metric is undefined for its inputs.
    """


@dataclass(frozen=True)
class EvalResult:
    """
    NSE and RMSE (de-normalized units, m3/s) over n_points predictions.
    """

    nse: float
    rmse: float
    n_points: int

    def __post_init__(self) -> None:
        if self.nse > 1.0:
            raise MetricError(f"nse cannot exceed 1, got {self.nse}")
        if self.rmse < 0:
            raise MetricError(f"rmse cannot be negative, got {self.rmse}")
        if self.n_points < 2:
            raise MetricError(f"an evaluation needs at least 2 points, got {self.n_points}")


def _pair(observed: ArrayLike, simulated: ArrayLike, minimum: int) -> Tuple[Tensor, Tensor]:
    obs = np.asarray(observed, dtype=np.float64).reshape(-1)
    sim = np.asarray(simulated, dtype=np.float64).reshape(-1)
    if obs.shape != sim.shape:
        raise ShapeError(f"observed has {obs.size} values, simulated {sim.size}")
    if obs.size < minimum:
        raise MetricError(f"need at least {minimum} points, got {obs.size}")
    if not (np.all(np.isfinite(obs)) and np.all(np.isfinite(sim))):
        raise MetricError("observed and simulated values must be finite")
    return obs, sim


def nse(observed: ArrayLike, simulated: ArrayLike) -> float:
    """
    Nash-Sutcliffe efficiency: 1 - sum((o - s)^2) / sum((o - mean(o))^2).

    Constant observations leave it undefined and raise MetricError.
    """
    obs, sim = _pair(observed, simulated, 2)
    mean = math.fsum(obs) / obs.size
    denominator = math.fsum((obs - mean) ** 2)
    if denominator == 0:
        raise MetricError("nse is undefined for constant observed values")
    return 1.0 - math.fsum((obs - sim) ** 2) / denominator


def rmse(observed: ArrayLike, simulated: ArrayLike) -> float:
    """
    Root mean squared error.
    """
    obs, sim = _pair(observed, simulated, 1)
    return math.sqrt(math.fsum((obs - sim) ** 2) / obs.size)


def relative_improvement(baseline_nse: float, new_nse: float) -> float:
    """
    100 * (new - baseline) / |baseline|, in percent.
    """
    if baseline_nse == 0:
        raise MetricError("relative improvement over a zero baseline is undefined")
    return 100.0 * (new_nse - baseline_nse) / abs(baseline_nse)


def evaluate(model: Model, samples: Sequence[WindowedSample], stats: NormStats) -> EvalResult:
    """
    Predict every sample, de-normalize predictions and labels with `stats`
    and score them.
    """
    if not samples:
        raise MetricError("evaluate needs at least one sample")
    predictions = stats.unscale("discharge", predict(model, list(samples)))
    labels = stats.unscale("discharge", [sample.label for sample in samples])
    return EvalResult(nse(labels, predictions), rmse(labels, predictions), len(samples))


def best_mode(row: Mapping[str, float]) -> str:
    """
    The transfer mode (a `T-HD-*` key) with the highest NSE in a results row;
    the first one listed wins ties.
    """
    modes = [mode for mode in row if mode.startswith("T-HD")]
    if not modes:
        raise ValueError(f"row {dict(row)} has no transfer modes")
    return max(modes, key=lambda mode: (row[mode], -modes.index(mode)))
