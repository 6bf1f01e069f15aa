"""
Pytest fixtures.
"""

from datetime import date, timedelta
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pytest

from hydrodeep.data import (
    PreparedWatershed,
    SynthSpec,
    WatershedDataset,
    generate_watershed,
    prepare_watershed,
)
from hydrodeep.network import ArchSpec, Model, build_model, save_checkpoint, tiny_arch
from hydrodeep.training import TrainConfig, train

START = date(2001, 3, 1)


def pytest_configure(config):
    """
    Add used markers.
    """
    config.addinivalue_line("markers", "slow: mark test as being 'slow', allowing to skip it")


def write_csv_watershed(
    directory: Path, n_grids: int = 3, n_days: int = 40, seed: int = 0
) -> Path:
    """
    Write a small, hand-assembled watershed in the three-file layout.
    """
    rng = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    grids = ["grid_id,x,y,dist_to_river"]
    for grid in range(n_grids):
        grids.append(f"{grid},{grid % 2}.0,{grid // 2}.0,{1.5 + 2 * grid}")
    series = ["date,grid_id,precip_mm,runoff_mm"]
    discharge = ["date,discharge_m3s"]
    for day in range(n_days):
        iso = (START + timedelta(days=day)).isoformat()
        total = 0.0
        for grid in range(n_grids):
            precip = round(float(rng.exponential(3.0)), 4)
            runoff = round(0.4 * precip + 0.1, 4)
            total += runoff
            series.append(f"{iso},{grid},{precip},{runoff}")
        discharge.append(f"{iso},{round(total, 4)}")
    (directory / "grids.csv").write_text("\n".join(grids) + "\n", encoding="utf8")
    (directory / "series.csv").write_text("\n".join(series) + "\n", encoding="utf8")
    (directory / "discharge.csv").write_text("\n".join(discharge) + "\n", encoding="utf8")
    return directory


@pytest.fixture
def watershed_dir_factory(tmp_path) -> Callable[..., Path]:
    """
    Returns a function writing a CSV watershed under tmp_path.
    """

    def factory(name: str = "tiny", **kwargs) -> Path:
        return write_csv_watershed(tmp_path / name, **kwargs)

    return factory


@pytest.fixture
def watershed_dir(watershed_dir_factory) -> Path:
    """
    A 3-grid, 40-day watershed directory.
    """
    return watershed_dir_factory()


@pytest.fixture
def small_arch() -> ArchSpec:
    """
    The tiny hydrodeep architecture.
    """
    return tiny_arch()


@pytest.fixture
def small_spec() -> SynthSpec:
    """
    A short synthetic watershed spec.
    """
    return SynthSpec(name="small", n_grids=3, seed=7, days=120)


@pytest.fixture
def small_dataset(small_spec) -> WatershedDataset:
    """
    The generated dataset of small_spec.
    """
    return generate_watershed(small_spec)


@pytest.fixture
def small_prepared(small_dataset) -> PreparedWatershed:
    """
    small_dataset split, normalized and windowed.
    """
    return prepare_watershed(small_dataset)


@pytest.fixture
def pretrained_model(small_arch, small_prepared) -> Model:
    """
    A tiny model trained briefly on small_dataset.
    """
    config = TrainConfig(iterations=5, batch_size=16, lr=0.01, seed=3)
    return train(build_model(small_arch, 11), small_prepared.samples["train"], config).model


@pytest.fixture
def pretrained_checkpoint(tmp_path, pretrained_model) -> Path:
    """
    pretrained_model saved as a checkpoint file.
    """
    return save_checkpoint(pretrained_model, tmp_path / "source.hdc")


@pytest.fixture
def config_file(tmp_path) -> Callable[..., Path]:
    """
    Returns a function writing a small run configuration.
    """

    def factory(extra: Optional[str] = None, seeds: bool = True) -> Path:
        lines = [
            "# small experiment",
            "synth.days = 90",
            "synth.source = src:3",
            "synth.targets = near:2:related,far:4:distant",
            "arch.conv = 3:2,4:2",
            "arch.lstm = 3",
            "arch.target_units = 2",
            "arch.head = 4,1",
            "train.iterations = 2",
            "train.batch_size = 16",
            "transfer.iterations = 1",
            "search.trials = 2",
            "search.iterations = 1",
            f"paths.data_dir = {tmp_path / 'data'}",
            f"paths.run_dir = {tmp_path / 'run'}",
        ]
        if seeds:
            lines += ["synth.seed = 5", "arch.seed = 6", "train.seed = 7"]
        if extra:
            lines.append(extra)
        path = tmp_path / "run.conf"
        path.write_text("\n".join(lines) + "\n", encoding="utf8")
        return path

    return factory
