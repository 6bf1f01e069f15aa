"""
Watershed data model and the three-file CSV layout.

    grids.csv      grid_id,x,y,dist_to_river
    series.csv     date,grid_id,precip_mm,runoff_mm   (exactly L rows per date)
    discharge.csv  date,discharge_m3s                 (one row per date)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..nn.tensor import Tensor

LOG = logging.getLogger(__name__)

GRIDS_FILE = "grids.csv"
SERIES_FILE = "series.csv"
DISCHARGE_FILE = "discharge.csv"

GRIDS_COLUMNS = ["grid_id", "x", "y", "dist_to_river"]
SERIES_COLUMNS = ["date", "grid_id", "precip_mm", "runoff_mm"]
DISCHARGE_COLUMNS = ["date", "discharge_m3s"]

DATE_FORMAT = "%Y-%m-%d"

PathLike = Union[str, Path]


class DataValidationError(ValueError):
    """
    Invalid watershed data. The message names the file and, when known, the
    1-based line of the offending row.
    """

    def __init__(self, message: str, path: Optional[PathLike] = None, line: Optional[int] = None):
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(location + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class GridCell:
    """
    One spatial unit of a watershed.
    """

    grid_id: int
    x: float
    y: float
    dist_to_river: float

    def __post_init__(self) -> None:
        if self.grid_id < 0:
            raise DataValidationError(f"grid_id must be non-negative, got {self.grid_id}")
        if not np.isfinite(self.dist_to_river) or self.dist_to_river < 0:
            raise DataValidationError(
                f"grid {self.grid_id}: dist_to_river must be >= 0, got {self.dist_to_river}"
            )


@dataclass(frozen=True)
class DateRange:
    """
    Inclusive range of calendar days. A range whose end precedes its start
    is empty.
    """

    start: date
    end: date

    @classmethod
    def from_length(cls, start: date, days: int) -> DateRange:
        """
        Build the range of `days` consecutive days starting at `start`.
        """
        return cls(start, start + timedelta(days=days - 1))

    @property
    def days(self) -> int:
        """
        Number of days in the range.
        """
        return max(0, (self.end - self.start).days + 1)

    def __str__(self) -> str:
        return f"{self.start.isoformat()}..{self.end.isoformat()}"


@dataclass(frozen=True, eq=False)
class WatershedDataset:
    """
    Grids, per-grid daily precipitation and runoff, and gauge discharge.

    precip and runoff are [L x T] in mm/day, discharge is [T] in m3/s; dates
    are T consecutive calendar days.
    """

    name: str
    grids: Tuple[GridCell, ...]
    dates: Tuple[date, ...]
    precip: Tensor
    runoff: Tensor
    discharge: Tensor

    def __post_init__(self) -> None:
        n_grids, n_days = len(self.grids), len(self.dates)
        if n_grids < 1:
            raise DataValidationError(f"watershed {self.name!r} needs at least one grid")
        if n_days < 1:
            raise DataValidationError(f"watershed {self.name!r} needs at least one day")
        ids = [grid.grid_id for grid in self.grids]
        if len(set(ids)) != n_grids:
            raise DataValidationError(f"watershed {self.name!r} has duplicate grid ids")
        for previous, current in zip(self.dates, self.dates[1:]):
            if (current - previous).days != 1:
                raise DataValidationError(
                    f"watershed {self.name!r}: dates jump from {previous} to {current}"
                )
        for label, values, shape in (
            ("precip", self.precip, (n_grids, n_days)),
            ("runoff", self.runoff, (n_grids, n_days)),
            ("discharge", self.discharge, (n_days,)),
        ):
            if values.shape != shape:
                raise DataValidationError(
                    f"watershed {self.name!r}: {label} has shape {values.shape}, expected {shape}"
                )
            if not np.all(np.isfinite(values)):
                raise DataValidationError(f"watershed {self.name!r}: {label} has non-finite values")
            values.flags.writeable = False
        if np.any(self.precip < 0) or np.any(self.runoff < 0):
            raise DataValidationError(f"watershed {self.name!r}: precip and runoff must be >= 0")

    @property
    def n_grids(self) -> int:
        """
        Number of grids L.
        """
        return len(self.grids)

    @property
    def n_days(self) -> int:
        """
        Number of days T.
        """
        return len(self.dates)

    @property
    def distances(self) -> Tensor:
        """
        Per-grid distance to the nearest river, in grid order.
        """
        return np.array([grid.dist_to_river for grid in self.grids], dtype=np.float64)

    @property
    def full_range(self) -> DateRange:
        """
        The range covering every date of the dataset.
        """
        return DateRange(self.dates[0], self.dates[-1])

    def index_slice(self, date_range: DateRange) -> slice:
        """
        Index slice of the dates covered by `date_range`, which must lie
        within the dataset.
        """
        if date_range.days == 0:
            start = (date_range.start - self.dates[0]).days
            return slice(start, start)
        start = (date_range.start - self.dates[0]).days
        stop = (date_range.end - self.dates[0]).days + 1
        if start < 0 or stop > self.n_days:
            raise ValueError(
                f"range {date_range} is outside the dates of watershed {self.name!r} "
                f"({self.full_range})"
            )
        return slice(start, stop)


def _read_csv(path: Path, columns: List[str]) -> pd.DataFrame:
    if not path.exists():
        raise DataValidationError("missing file", path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf8")
    except pd.errors.ParserError as exc:
        raise DataValidationError(f"malformed row ({exc})", path) from exc
    except pd.errors.EmptyDataError as exc:
        raise DataValidationError("empty file", path, 1) from exc
    if list(frame.columns) != columns:
        raise DataValidationError(
            f"header must be {','.join(columns)}, got {','.join(map(str, frame.columns))}",
            path,
            1,
        )
    return frame


def _numeric(frame: pd.DataFrame, column: str, path: Path, integer: bool = False) -> np.ndarray:
    values = pd.to_numeric(frame[column].str.strip(), errors="coerce")
    bad = values.isna() | ~np.isfinite(values.astype(np.float64))
    if integer:
        bad |= values.astype(np.float64) % 1 != 0
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataValidationError(
            f"malformed {column} value {frame[column].iloc[row]!r}", path, row + 2
        )
    return values.to_numpy(dtype=np.int64 if integer else np.float64)


def _dates(frame: pd.DataFrame, path: Path) -> pd.Series:
    parsed = pd.to_datetime(frame["date"].str.strip(), format=DATE_FORMAT, errors="coerce")
    if parsed.isna().any():
        row = int(np.flatnonzero(parsed.isna().to_numpy())[0])
        raise DataValidationError(
            f"malformed date {frame['date'].iloc[row]!r}, expected YYYY-MM-DD", path, row + 2
        )
    return parsed.dt.date


def _check_consecutive(days: Sequence[date], path: Path) -> None:
    for previous, current in zip(days, days[1:]):
        if (current - previous).days != 1:
            missing = previous + timedelta(days=1)
            raise DataValidationError(
                f"date gap: no rows between {previous} and {current} (first missing {missing})",
                path,
            )


def load_grids(path: Path) -> Tuple[GridCell, ...]:
    """
    Load and validate grids.csv.
    """
    frame = _read_csv(path, GRIDS_COLUMNS)
    if frame.empty:
        raise DataValidationError("no grid rows", path)
    ids = _numeric(frame, "grid_id", path, integer=True)
    xs, ys = _numeric(frame, "x", path), _numeric(frame, "y", path)
    dists = _numeric(frame, "dist_to_river", path)
    seen: Dict[int, int] = {}
    grids = []
    for row, (grid_id, x, y, dist) in enumerate(zip(ids, xs, ys, dists)):
        line = row + 2
        if grid_id in seen:
            raise DataValidationError(
                f"duplicate grid_id {grid_id} (first on line {seen[grid_id]})", path, line
            )
        seen[int(grid_id)] = line
        try:
            grids.append(GridCell(int(grid_id), float(x), float(y), float(dist)))
        except DataValidationError as exc:
            raise DataValidationError(str(exc), path, line) from exc
    return tuple(grids)


def load_watershed(dir_path: PathLike, name: Optional[str] = None) -> WatershedDataset:
    """
    Load and validate a watershed directory holding grids.csv, series.csv and
    discharge.csv.
    """
    directory = Path(dir_path)
    grids = load_grids(directory / GRIDS_FILE)
    grid_index = {grid.grid_id: position for position, grid in enumerate(grids)}

    series_path = directory / SERIES_FILE
    series = _read_csv(series_path, SERIES_COLUMNS)
    if series.empty:
        raise DataValidationError("no series rows", series_path)
    series_dates = _dates(series, series_path)
    series_ids = _numeric(series, "grid_id", series_path, integer=True)
    precip = _numeric(series, "precip_mm", series_path)
    runoff = _numeric(series, "runoff_mm", series_path)
    for column, values in (("precip_mm", precip), ("runoff_mm", runoff)):
        negative = np.flatnonzero(values < 0)
        if negative.size:
            raise DataValidationError(
                f"{column} must be >= 0, got {values[negative[0]]}", series_path, negative[0] + 2
            )
    unknown = [row for row, grid_id in enumerate(series_ids) if grid_id not in grid_index]
    if unknown:
        raise DataValidationError(
            f"grid_id {series_ids[unknown[0]]} is not declared in {GRIDS_FILE}",
            series_path,
            unknown[0] + 2,
        )
    keys = pd.DataFrame({"date": series_dates, "grid_id": series_ids})
    duplicated = keys.duplicated()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise DataValidationError(
            f"duplicate (grid_id, date) = ({series_ids[row]}, {series_dates.iloc[row]})",
            series_path,
            row + 2,
        )
    days = sorted(set(series_dates))
    _check_consecutive(days, series_path)
    counts = keys.groupby("date").size()
    short = counts[counts != len(grids)]
    if not short.empty:
        raise DataValidationError(
            f"date {short.index[0]} has {int(short.iloc[0])} rows, expected one per grid "
            f"({len(grids)})",
            series_path,
        )
    day_index = {day: position for position, day in enumerate(days)}
    rows = np.array([grid_index[grid_id] for grid_id in series_ids])
    cols = np.array([day_index[day] for day in series_dates])
    precip_grid = np.zeros((len(grids), len(days)))
    runoff_grid = np.zeros((len(grids), len(days)))
    precip_grid[rows, cols] = precip
    runoff_grid[rows, cols] = runoff

    discharge_path = directory / DISCHARGE_FILE
    frame = _read_csv(discharge_path, DISCHARGE_COLUMNS)
    discharge_dates = _dates(frame, discharge_path)
    values = _numeric(frame, "discharge_m3s", discharge_path)
    duplicated = discharge_dates.duplicated()
    if duplicated.any():
        row = int(np.flatnonzero(duplicated.to_numpy())[0])
        raise DataValidationError(
            f"duplicate date {discharge_dates.iloc[row]}", discharge_path, row + 2
        )
    if sorted(discharge_dates) != days:
        raise DataValidationError(
            f"dates must match {SERIES_FILE} ({days[0]}..{days[-1]}, {len(days)} rows), "
            f"got {len(frame)} rows",
            discharge_path,
        )
    discharge = np.zeros(len(days))
    discharge[[day_index[day] for day in discharge_dates]] = values

    dataset = WatershedDataset(
        name=name or directory.name,
        grids=grids,
        dates=tuple(days),
        precip=precip_grid,
        runoff=runoff_grid,
        discharge=discharge,
    )
    LOG.info("loaded watershed %s: L=%d, T=%d", dataset.name, dataset.n_grids, dataset.n_days)
    return dataset


def save_watershed(dataset: WatershedDataset, dir_path: PathLike) -> Path:
    """
    Write a dataset in the three-file CSV layout. Output bytes depend only on
    the dataset values.
    """
    directory = Path(dir_path)
    directory.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(
        {
            "grid_id": [grid.grid_id for grid in dataset.grids],
            "x": [grid.x for grid in dataset.grids],
            "y": [grid.y for grid in dataset.grids],
            "dist_to_river": [grid.dist_to_river for grid in dataset.grids],
        },
        columns=GRIDS_COLUMNS,
    ).to_csv(directory / GRIDS_FILE, index=False, lineterminator="\n")
    iso_dates = [day.isoformat() for day in dataset.dates]
    pd.DataFrame(
        {
            "date": np.repeat(iso_dates, dataset.n_grids),
            "grid_id": np.tile([grid.grid_id for grid in dataset.grids], dataset.n_days),
            "precip_mm": dataset.precip.T.reshape(-1),
            "runoff_mm": dataset.runoff.T.reshape(-1),
        },
        columns=SERIES_COLUMNS,
    ).to_csv(directory / SERIES_FILE, index=False, lineterminator="\n")
    pd.DataFrame(
        {"date": iso_dates, "discharge_m3s": dataset.discharge}, columns=DISCHARGE_COLUMNS
    ).to_csv(directory / DISCHARGE_FILE, index=False, lineterminator="\n")
    return directory
