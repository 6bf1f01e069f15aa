"""
Transfer of a pretrained source model to target watersheds.

Each approach is a freeze plan over the four parameter groups:

    T-HD-1  everything frozen, no training (zero-shot)
    T-HD-2  nothing frozen
    T-HD-3  conv and target_branch frozen (temporal finetuning)
    T-HD-4  lstm frozen (spatial finetuning)

The head is trainable in every finetuning mode.
"""
from __future__ import annotations

import logging
import statistics
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import pandas as pd

from .data.watershed import WatershedDataset
from .data.windows import PreparedWatershed, WindowedSample, prepare_watershed
from .metrics import evaluate, relative_improvement
from .network.arch import GROUPS
from .network.checkpoint import load_checkpoint
from .network.model import Model, build_model
from .training import TrainConfig, TrainReport, train
from .utils import run_parallel, spawn_seeds

LOG = logging.getLogger(__name__)

DEFAULT_FINETUNE_ITERATIONS = 20

BASELINE = "HD"

MATRIX_COLUMNS = ["target", "grids", "mode", "nse", "rmse", "train_seconds"]

PathLike = Union[str, Path]


# pylint: disable=invalid-name
class TransferMode(Enum):
    """
    The four ways of reusing a pretrained model's layers.
    """

    T_HD_1 = "T-HD-1"
    T_HD_2 = "T-HD-2"
    T_HD_3 = "T-HD-3"
    T_HD_4 = "T-HD-4"

    @classmethod
    def parse(cls, text: str) -> TransferMode:
        """
        Look a mode up by its label, e.g. "T-HD-3".
        """
        for mode in cls:
            if mode.value == text.strip():
                return mode
        labels = [mode.value for mode in cls]
        raise ValueError(f"unknown transfer mode {text!r}, expected one of {labels}")


FROZEN_GROUPS: Dict[TransferMode, FrozenSet[str]] = {
    TransferMode.T_HD_1: frozenset(GROUPS),
    TransferMode.T_HD_2: frozenset(),
    TransferMode.T_HD_3: frozenset({"conv", "target_branch"}),
    TransferMode.T_HD_4: frozenset({"lstm"}),
}

INTERPRETATIONS: Dict[TransferMode, str] = {
    TransferMode.T_HD_1: "source and target are spatiotemporally similar",
    TransferMode.T_HD_2: "the target has distinct spatial and temporal features",
    TransferMode.T_HD_3: "the target has distinct temporal features",
    TransferMode.T_HD_4: "the target has distinct spatial features",
}


@dataclass(frozen=True)
class TransferPlan:
    """
    A transfer mode with its frozen groups and finetuning budget.
    """

    mode: TransferMode
    frozen: FrozenSet[str]
    iterations: int

    def __post_init__(self) -> None:
        unknown = set(self.frozen) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups {sorted(unknown)}, expected {GROUPS}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.mode == TransferMode.T_HD_1 and self.iterations != 0:
            raise ValueError("T-HD-1 is evaluated without training")

    @property
    def trainable(self) -> Tuple[str, ...]:
        """
        Groups that receive updates.
        """
        return tuple(group for group in GROUPS if group not in self.frozen)


def make_transfer_plan(
    mode: TransferMode, iterations: int = DEFAULT_FINETUNE_ITERATIONS
) -> TransferPlan:
    """
    The fixed freeze plan of a mode; T-HD-1 always gets 0 iterations.
    """
    budget = 0 if mode == TransferMode.T_HD_1 else iterations
    return TransferPlan(mode, FROZEN_GROUPS[mode], budget)


def interpret_best_mode(mode: TransferMode) -> str:
    """
    What it says about a target when a given mode transfers best.
    """
    return INTERPRETATIONS[mode]


def transfer_model(
    source: Union[Model, PathLike],
    plan: TransferPlan,
    samples: Sequence[WindowedSample],
    config: TrainConfig,
) -> Tuple[Model, TrainReport]:
    """
    Finetune a source model (or checkpoint path) on target samples under a
    plan. Parameters are reused unchanged; T-HD-1 returns the source model
    untouched and creates no optimizer state.
    """
    model = source if isinstance(source, Model) else load_checkpoint(source)
    plan_config = replace(config, iterations=plan.iterations, frozen=plan.frozen)
    if plan.mode == TransferMode.T_HD_1:
        return model, TrainReport([], 0.0, model, plan_config)
    if not samples:
        raise ValueError(f"{plan.mode.value} needs target training samples")
    report = train(model, samples, plan_config)
    return report.model, report


@dataclass(frozen=True)
class MatrixCell:
    """
    One (target, mode) result. `mode` is a transfer mode label or "HD" for
    the from-scratch baseline.
    """

    target: str
    grids: int
    mode: str
    nse: float
    rmse: float
    train_seconds: float
    report: Optional[TrainReport] = field(default=None, compare=False)


@dataclass(frozen=True)
class TransferMatrix:
    """
    Results of every target and mode, target-major in run order.
    """

    cells: List[MatrixCell]

    @property
    def targets(self) -> List[str]:
        """
        Target names in run order.
        """
        return list(dict.fromkeys(cell.target for cell in self.cells))

    @property
    def modes(self) -> List[str]:
        """
        Column labels in run order, HD first.
        """
        return list(dict.fromkeys(cell.mode for cell in self.cells))

    def row(self, target: str) -> Dict[str, MatrixCell]:
        """
        The cells of one target keyed by mode label.
        """
        return {cell.mode: cell for cell in self.cells if cell.target == target}

    def best_transfer(self, target: str) -> MatrixCell:
        """
        The transfer cell with the highest NSE; the first listed wins ties.
        """
        cells = [cell for cell in self.row(target).values() if cell.mode != BASELINE]
        if not cells:
            raise ValueError(f"no transfer cells for target {target}")
        return max(cells, key=lambda cell: (cell.nse, -cells.index(cell)))

    def to_frame(self) -> pd.DataFrame:
        """
        The matrix as rows of target,grids,mode,nse,rmse,train_seconds.
        """
        return pd.DataFrame(
            [
                [cell.target, cell.grids, cell.mode, cell.nse, cell.rmse, cell.train_seconds]
                for cell in self.cells
            ],
            columns=MATRIX_COLUMNS,
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> TransferMatrix:
        """
        Rebuild a matrix (without reports) from its CSV rows.
        """
        if list(frame.columns) != MATRIX_COLUMNS:
            raise ValueError(f"results need columns {MATRIX_COLUMNS}, got {list(frame.columns)}")
        return cls(
            [
                MatrixCell(
                    str(row.target),
                    int(row.grids),
                    str(row.mode),
                    float(row.nse),
                    float(row.rmse),
                    float(row.train_seconds),
                )
                for row in frame.itertuples(index=False)
            ]
        )


def _baseline_cell(
    source: Model, target: PreparedWatershed, config: TrainConfig, iterations: int, seed: int
) -> MatrixCell:
    fresh = build_model(source.arch, seed)
    report = train(
        fresh, target.samples["train"], replace(config, iterations=iterations, seed=seed)
    )
    result = evaluate(report.model, target.samples["test"], target.stats)
    return MatrixCell(
        target.name,
        target.dataset.n_grids,
        BASELINE,
        result.nse,
        result.rmse,
        report.wall_seconds,
        report,
    )


def _transfer_cell(
    source: Model, target: PreparedWatershed, plan: TransferPlan, config: TrainConfig, seed: int
) -> MatrixCell:
    model, report = transfer_model(
        source, plan, target.samples["train"], replace(config, seed=seed)
    )
    result = evaluate(model, target.samples["test"], target.stats)
    LOG.info(
        "%s %s: nse %.4f in %.2fs", target.name, plan.mode.value, result.nse, report.wall_seconds
    )
    return MatrixCell(
        target.name,
        target.dataset.n_grids,
        plan.mode.value,
        result.nse,
        result.rmse,
        report.wall_seconds,
        report,
    )


def run_transfer_matrix(
    source: Union[Model, PathLike],
    targets: Sequence[Tuple[str, WatershedDataset]],
    modes: Sequence[TransferMode],
    config: TrainConfig,
    iterations: int = DEFAULT_FINETUNE_ITERATIONS,
    workers: int = 1,
    train_fraction: float = 0.7,
    validation_fraction: float = 0.15,
) -> TransferMatrix:
    """
    Evaluate every mode plus the from-scratch baseline on every target's
    test split. Target normalization is refit on each target's train split.

    Each cell gets its own seed, split from config.seed in (target, column)
    order, so the results do not depend on `workers`.
    """
    model = source if isinstance(source, Model) else load_checkpoint(source)
    prepared = []
    for name, dataset in targets:
        if name != dataset.name:
            dataset = replace(dataset, name=name)
        prepared.append(prepare_watershed(dataset, train_fraction, validation_fraction))
    plans = [make_transfer_plan(mode, iterations) for mode in modes]
    seeds = iter(spawn_seeds(config.seed, len(prepared) * (len(plans) + 1)))
    jobs = []
    for target in prepared:
        seed = next(seeds)
        jobs.append(
            lambda target=target, seed=seed: _baseline_cell(model, target, config, iterations, seed)
        )
        for plan in plans:
            seed = next(seeds)
            jobs.append(
                lambda target=target, plan=plan, seed=seed: _transfer_cell(
                    model, target, plan, config, seed
                )
            )
    return TransferMatrix(run_parallel(jobs, workers))


@dataclass(frozen=True)
class ReplicateSummary:
    """
    Matrices of repeated transfer runs and, per target, how many replicates
    the best transfer mode beat the from-scratch baseline.
    """

    matrices: List[TransferMatrix]
    wins: Dict[str, int]


def run_transfer_replicates(
    source: Union[Model, PathLike],
    targets: Sequence[Tuple[str, WatershedDataset]],
    modes: Sequence[TransferMode],
    config: TrainConfig,
    replicates: int,
    iterations: int = DEFAULT_FINETUNE_ITERATIONS,
    workers: int = 1,
    train_fraction: float = 0.7,
    validation_fraction: float = 0.15,
) -> ReplicateSummary:
    """
    Repeat run_transfer_matrix with replicate seeds split from config.seed.
    """
    if replicates < 1:
        raise ValueError(f"replicates must be >= 1, got {replicates}")
    model = source if isinstance(source, Model) else load_checkpoint(source)
    matrices = [
        run_transfer_matrix(
            model,
            targets,
            modes,
            replace(config, seed=seed),
            iterations,
            workers,
            train_fraction,
            validation_fraction,
        )
        for seed in spawn_seeds(config.seed, replicates)
    ]
    wins = {name: 0 for name, _ in targets}
    for matrix in matrices:
        for name in matrix.targets:
            if matrix.best_transfer(name).nse > matrix.row(name)[BASELINE].nse:
                wins[name] += 1
    return ReplicateSummary(matrices, wins)


def _time_column(row: Dict[str, MatrixCell]) -> str:
    seconds = [
        cell.train_seconds
        for mode, cell in row.items()
        if mode != BASELINE and mode != TransferMode.T_HD_1.value
    ]
    if not seconds:
        return "-"
    spread = statistics.stdev(seconds) if len(seconds) > 1 else 0.0
    return f"{statistics.mean(seconds):.2f} ± {spread:.2f}"


def format_table(matrix: TransferMatrix) -> str:
    """
    Text table in the column order target, grids, HD, T-HD-1..4, time,
    with the best cell of every row marked `*`, the improvement of the best
    transfer mode over HD, and one interpretation line per target.

    The time column is the mean ± standard deviation of the finetuning
    seconds of the trained transfer cells.
    """
    modes = matrix.modes
    header = ["Watershed", "Grids"] + modes + ["Time (s)", "Improvement"]
    lines = []
    notes = []
    for target in matrix.targets:
        row = matrix.row(target)
        best = max(modes, key=lambda mode: (row[mode].nse, -modes.index(mode)))
        values = [target, str(next(iter(row.values())).grids)]
        for mode in modes:
            values.append(f"{row[mode].nse:.3f}" + ("*" if mode == best else ""))
        values.append(_time_column(row))
        improvement = "-"
        if BASELINE in row and len(row) > 1:
            transfer = matrix.best_transfer(target)
            if row[BASELINE].nse != 0:
                gain = relative_improvement(row[BASELINE].nse, transfer.nse)
                improvement = f"{gain:+.0f}%"
            mode = TransferMode.parse(transfer.mode)
            notes.append(f"{target}: best transfer {mode.value}, {interpret_best_mode(mode)}")
        values.append(improvement)
        lines.append(values)
    widths = [max(len(str(item)) for item in column) for column in zip(header, *lines)]
    rendered = [
        "  ".join(str(item).ljust(width) for item, width in zip(values, widths)).rstrip()
        for values in [header] + lines
    ]
    rendered.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(rendered + [""] + notes) + "\n"


def write_matrix_csv(matrix: TransferMatrix, path: PathLike) -> Path:
    """
    Write the matrix with header target,grids,mode,nse,rmse,train_seconds.
    """
    target = Path(path)
    matrix.to_frame().to_csv(target, index=False, lineterminator="\n")
    return target


def read_matrix_csv(path: PathLike) -> TransferMatrix:
    """
    Read a file written by write_matrix_csv.
    """
    return TransferMatrix.from_frame(pd.read_csv(path))
