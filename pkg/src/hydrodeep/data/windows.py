"""
From a watershed dataset to network samples: the distance-weight transform,
min-max normalization, 7-day windows and the train/validation/test split.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date, timedelta
from typing import Dict, List, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..nn.tensor import ArrayLike, ShapeError, Tensor
from .watershed import DateRange, WatershedDataset

LOG = logging.getLogger(__name__)

# Days of history preceding the target day t_p.
WINDOW = 7

# Channel order inside history and target_day.
CHANNELS = ("precip_weighted", "runoff")

SPLITS = ("train", "validation", "test")


@dataclass(frozen=True)
class DistanceWeights:
    """
    Per-grid multipliers for precipitation, larger for grids close to a
    river. Positive, summing to L.
    """

    weights: Tensor

    def __len__(self) -> int:
        return int(self.weights.shape[0])


def distance_weights(distances: ArrayLike, epsilon: float = 1e-6) -> DistanceWeights:
    """
    Normalized reciprocal distances: w_i = L * r_i / sum(r), r_i = 1 / (d_i + eps).
    """
    values = np.asarray(distances, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValueError("distance_weights needs at least one distance")
    if not np.all(np.isfinite(values)):
        raise ValueError("distances must be finite")
    if np.any(values < 0):
        raise ValueError(f"distances must be >= 0, got min {values.min()}")
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    shifted = values + epsilon
    if np.any(shifted == 0):
        raise ValueError("a zero distance needs epsilon > 0")
    raw = 1.0 / shifted
    weights = values.size * raw / raw.sum()
    weights.flags.writeable = False
    return DistanceWeights(weights)


def apply_weights(precip: ArrayLike, weights: DistanceWeights) -> Tensor:
    """
    out[i, t] = w_i * precip[i, t]
    """
    values = np.asarray(precip, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != len(weights):
        raise ShapeError(
            f"precip must be [L x T] with L={len(weights)} grids, got shape {values.shape}"
        )
    return values * weights.weights[:, np.newaxis]


@dataclass(frozen=True)
class NormStats:
    """
    Min and max per channel kind over a training range, pooled over grids.
    """

    precip_min: float
    precip_max: float
    runoff_min: float
    runoff_max: float
    discharge_min: float
    discharge_max: float

    def __post_init__(self) -> None:
        for kind in ("precip", "runoff", "discharge"):
            low, high = self.bounds(kind)
            if not high >= low:
                raise ValueError(f"{kind} max {high} is below min {low}")

    def bounds(self, kind: str) -> Tuple[float, float]:
        """
        (min, max) of one channel kind: precip, runoff or discharge.
        """
        return getattr(self, f"{kind}_min"), getattr(self, f"{kind}_max")

    def degenerate(self, kind: str) -> bool:
        """
        True when the channel kind was constant over the fitting range.
        """
        low, high = self.bounds(kind)
        return bool(high == low)

    def scale(self, kind: str, values: ArrayLike) -> Tensor:
        """
        Min-max scale to [0, 1]; degenerate channels map to 0.
        """
        low, high = self.bounds(kind)
        array = np.asarray(values, dtype=np.float64)
        if high == low:
            return np.zeros_like(array)
        return (array - low) / (high - low)

    def unscale(self, kind: str, values: ArrayLike) -> Tensor:
        """
        Inverse of `scale`; degenerate channels map back to their constant.
        """
        low, high = self.bounds(kind)
        array = np.asarray(values, dtype=np.float64)
        return array * (high - low) + low


def normalize_fit(
    dataset: WatershedDataset, weights: DistanceWeights, train_range: DateRange
) -> NormStats:
    """
    Fit NormStats on `train_range` only.
    """
    if train_range.days == 0:
        raise ValueError(f"cannot fit normalization on the empty range {train_range}")
    window = dataset.index_slice(train_range)
    precip = apply_weights(dataset.precip, weights)[:, window]
    runoff = dataset.runoff[:, window]
    discharge = dataset.discharge[window]
    stats = NormStats(
        precip_min=float(precip.min()),
        precip_max=float(precip.max()),
        runoff_min=float(runoff.min()),
        runoff_max=float(runoff.max()),
        discharge_min=float(discharge.min()),
        discharge_max=float(discharge.max()),
    )
    for kind in ("precip", "runoff", "discharge"):
        if stats.degenerate(kind):
            LOG.warning(
                "watershed %s: %s is constant over %s, scaling it to 0",
                dataset.name,
                kind,
                train_range,
            )
    return stats


@dataclass(frozen=True, eq=False)
class WindowedSample:
    """
    history [L x 2 x 7] covers days t_p-7 .. t_p-1, target_day [L x 2] is day
    t_p, label is the scaled discharge on t_p.
    """

    history: Tensor
    target_day: Tensor
    label: float
    t_p: date

    @property
    def n_grids(self) -> int:
        """
        Number of grids L.
        """
        return int(self.history.shape[0])


def window_samples(
    dataset: WatershedDataset,
    weights: DistanceWeights,
    stats: NormStats,
    date_range: DateRange,
) -> List[WindowedSample]:
    """
    One sample per day t_p of `date_range` whose seven preceding days also
    lie in the range; ranges of 7 days or fewer give no samples.
    """
    if date_range.days <= WINDOW:
        return []
    window = dataset.index_slice(date_range)
    channels = np.stack(
        [
            stats.scale("precip", apply_weights(dataset.precip, weights)[:, window]),
            stats.scale("runoff", dataset.runoff[:, window]),
        ],
        axis=1,
    )
    labels = stats.scale("discharge", dataset.discharge[window])
    # [L, 2, n - 7, 8]
    views = sliding_window_view(channels, WINDOW + 1, axis=2)
    samples = []
    for offset in range(views.shape[2]):
        history = np.ascontiguousarray(views[:, :, offset, :WINDOW])
        target_day = np.ascontiguousarray(views[:, :, offset, WINDOW])
        history.flags.writeable = False
        target_day.flags.writeable = False
        day_index = window.start + offset + WINDOW
        samples.append(
            WindowedSample(
                history=history,
                target_day=target_day,
                label=float(labels[offset + WINDOW]),
                t_p=dataset.dates[day_index],
            )
        )
    return samples


def split_ranges(
    dataset: WatershedDataset,
    train_fraction: float = 0.7,
    validation_fraction: float = 0.15,
) -> Dict[str, DateRange]:
    """
    Split the dates into leading train and trailing test ranges; validation
    is the tail of the train range, which still counts as train.

    Returns {"train", "validation", "test"}.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if not 0 < validation_fraction < 1:
        raise ValueError(f"validation_fraction must be in (0, 1), got {validation_fraction}")
    n_train = int(dataset.n_days * train_fraction)
    if n_train < 1 or n_train >= dataset.n_days:
        raise ValueError(
            f"watershed {dataset.name!r} has {dataset.n_days} days, too few to split "
            f"at {train_fraction}"
        )
    n_validation = max(1, int(n_train * validation_fraction))
    dates = dataset.dates
    return {
        "train": DateRange(dates[0], dates[n_train - 1]),
        "validation": DateRange(dates[n_train - n_validation], dates[n_train - 1]),
        "test": DateRange(dates[n_train], dates[-1]),
    }


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """
    Samples stacked along a leading batch axis.
    """

    history: Tensor
    target_day: Tensor
    label: Tensor

    def __len__(self) -> int:
        return int(self.label.shape[0])


def stack_samples(samples: Sequence[WindowedSample]) -> SampleBatch:
    """
    Stack samples of one watershed into history [B, L, 2, 7],
    target_day [B, L, 2] and label [B].
    """
    if not samples:
        raise ValueError("cannot stack an empty list of samples")
    grids = {sample.n_grids for sample in samples}
    if len(grids) != 1:
        raise ShapeError(f"samples mix grid counts L={sorted(grids)}")
    return SampleBatch(
        history=np.stack([sample.history for sample in samples]),
        target_day=np.stack([sample.target_day for sample in samples]),
        label=np.array([sample.label for sample in samples], dtype=np.float64),
    )


@dataclass(frozen=True, eq=False)
class PreparedWatershed:
    """
    A dataset with its distance weights, split ranges, train-fitted
    normalization and the samples of every split.

    `fit` is the part of the train range preceding validation; models
    selected on validation are fitted on it.
    """

    dataset: WatershedDataset
    weights: DistanceWeights
    ranges: Dict[str, DateRange]
    stats: NormStats
    samples: Dict[str, List[WindowedSample]]

    @property
    def name(self) -> str:
        """
        Watershed name.
        """
        return self.dataset.name


def prepare_watershed(
    dataset: WatershedDataset,
    train_fraction: float = 0.7,
    validation_fraction: float = 0.15,
) -> PreparedWatershed:
    """
    Weights, splits, normalization and samples of one watershed. Statistics
    come from the train range only.
    """
    weights = distance_weights(dataset.distances)
    ranges = split_ranges(dataset, train_fraction, validation_fraction)
    ranges["fit"] = DateRange(ranges["train"].start, ranges["validation"].start - timedelta(days=1))
    stats = normalize_fit(dataset, weights, ranges["train"])
    samples = {
        split: window_samples(dataset, weights, stats, date_range)
        for split, date_range in ranges.items()
    }
    return PreparedWatershed(dataset, weights, ranges, stats, samples)
