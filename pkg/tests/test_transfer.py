"""
Tests for transfer plans, finetuning and the transfer matrix.
"""

from typing import List, Tuple

import numpy as np
import pytest
from flaky import flaky

from hydrodeep.data import (
    SynthSpec,
    WatershedDataset,
    WatershedDecl,
    generate_experiment,
    prepare_watershed,
)
from hydrodeep.metrics import evaluate
from hydrodeep.network import build_model, predict
from hydrodeep.training import TrainConfig, mse_loss, train
from hydrodeep.transfer import (
    BASELINE,
    FROZEN_GROUPS,
    MatrixCell,
    TransferMatrix,
    TransferMode,
    TransferPlan,
    format_table,
    interpret_best_mode,
    make_transfer_plan,
    read_matrix_csv,
    run_transfer_matrix,
    run_transfer_replicates,
    transfer_model,
    write_matrix_csv,
)

ALL_MODES = list(TransferMode)

FINETUNE = TrainConfig(batch_size=16, lr=0.01, seed=2)


@pytest.fixture
def targets() -> List[Tuple[str, WatershedDataset]]:
    """
    A related and a distant target of different grid counts.
    """
    base = SynthSpec(name="src", n_grids=3, seed=7, days=90)
    generated = generate_experiment(
        base,
        WatershedDecl("src", 3),
        [WatershedDecl("near", 2, "related"), WatershedDecl("far", 4, "distant")],
    )
    return [(item.decl.name, item.dataset) for item in generated[1:]]


def test_transfer_mode_parse():
    assert TransferMode.parse("T-HD-3") is TransferMode.T_HD_3
    assert TransferMode.parse(" T-HD-1 ") is TransferMode.T_HD_1
    with pytest.raises(ValueError, match="unknown transfer mode"):
        TransferMode.parse("T-HD-5")


def test_transfer_plans():
    assert make_transfer_plan(TransferMode.T_HD_1, 20).iterations == 0
    assert make_transfer_plan(TransferMode.T_HD_2, 20).iterations == 20
    assert make_transfer_plan(TransferMode.T_HD_1).trainable == ()
    assert make_transfer_plan(TransferMode.T_HD_2).trainable == (
        "conv",
        "lstm",
        "target_branch",
        "head",
    )
    assert make_transfer_plan(TransferMode.T_HD_3).trainable == ("lstm", "head")
    assert make_transfer_plan(TransferMode.T_HD_4).trainable == ("conv", "target_branch", "head")
    assert all("head" not in FROZEN_GROUPS[mode] for mode in ALL_MODES[1:])
    with pytest.raises(ValueError):
        TransferPlan(TransferMode.T_HD_1, FROZEN_GROUPS[TransferMode.T_HD_1], 5)
    with pytest.raises(ValueError):
        TransferPlan(TransferMode.T_HD_2, frozenset({"decoder"}), 5)
    with pytest.raises(ValueError):
        TransferPlan(TransferMode.T_HD_2, frozenset(), -1)


def test_interpretations():
    assert "temporal" in interpret_best_mode(TransferMode.T_HD_3)
    assert "spatial" in interpret_best_mode(TransferMode.T_HD_4)
    assert "similar" in interpret_best_mode(TransferMode.T_HD_1)


def test_zero_shot_leaves_the_model_unchanged(pretrained_model, small_prepared):
    samples = small_prepared.samples["test"]
    plan = make_transfer_plan(TransferMode.T_HD_1)
    model, report = transfer_model(pretrained_model, plan, samples, FINETUNE)
    assert model is pretrained_model
    assert report.losses == []
    assert report.wall_seconds == 0.0
    assert np.array_equal(predict(model, samples), predict(pretrained_model, samples))


def test_transfer_from_a_checkpoint(pretrained_model, pretrained_checkpoint, small_prepared):
    plan = make_transfer_plan(TransferMode.T_HD_1)
    model, _ = transfer_model(pretrained_checkpoint, plan, [], FINETUNE)
    for name, tensor in pretrained_model.params.items():
        assert np.array_equal(model.params[name], tensor)
    plan = make_transfer_plan(TransferMode.T_HD_2, 1)
    samples = small_prepared.samples["train"]
    from_path, _ = transfer_model(pretrained_checkpoint, plan, samples, FINETUNE)
    from_model, _ = transfer_model(pretrained_model, plan, samples, FINETUNE)
    for name, tensor in from_model.params.items():
        assert np.array_equal(from_path.params[name], tensor)


@pytest.mark.parametrize("mode", [TransferMode.T_HD_3, TransferMode.T_HD_4])
def test_frozen_groups_stay_bit_identical(pretrained_model, targets, mode):
    _, dataset = targets[0]
    samples = prepare_watershed(dataset).samples["train"]
    model, report = transfer_model(pretrained_model, make_transfer_plan(mode, 2), samples, FINETUNE)
    assert len(report.losses) == 2
    assert report.config.frozen == FROZEN_GROUPS[mode]
    for group in FROZEN_GROUPS[mode]:
        for name, tensor in pretrained_model.group_tensors(group).items():
            assert np.array_equal(model.params[name], tensor), name
    assert model.params["head.1.bias"][0] != pretrained_model.params["head.1.bias"][0]
    # The recurrent layer moves under T-HD-3, the convolution under T-HD-4.
    moved = "lstm" if mode is TransferMode.T_HD_3 else "conv"
    assert any(
        not np.array_equal(model.params[name], tensor)
        for name, tensor in pretrained_model.group_tensors(moved).items()
    )


def test_finetuning_fits_the_target_better_than_zero_shot(pretrained_model, targets):
    _, dataset = targets[1]
    samples = prepare_watershed(dataset).samples["train"]
    labels = [sample.label for sample in samples]
    zero_shot, _ = transfer_model(
        pretrained_model, make_transfer_plan(TransferMode.T_HD_1), samples, FINETUNE
    )
    tuned, _ = transfer_model(
        pretrained_model, make_transfer_plan(TransferMode.T_HD_2, 20), samples, FINETUNE
    )
    before = mse_loss(labels, predict(zero_shot, samples))
    after = mse_loss(labels, predict(tuned, samples))
    assert after <= before


def test_finetuning_needs_samples(pretrained_model):
    with pytest.raises(ValueError, match="T-HD-2"):
        transfer_model(pretrained_model, make_transfer_plan(TransferMode.T_HD_2), [], FINETUNE)


def test_run_transfer_matrix(pretrained_model, targets):
    matrix = run_transfer_matrix(pretrained_model, targets, ALL_MODES, FINETUNE, iterations=1)
    assert len(matrix.cells) == 10
    assert matrix.targets == ["near", "far"]
    assert matrix.modes == [BASELINE, "T-HD-1", "T-HD-2", "T-HD-3", "T-HD-4"]
    near = matrix.row("near")
    assert near["T-HD-1"].grids == 2
    assert matrix.row("far")["HD"].grids == 4
    assert near["T-HD-1"].train_seconds == 0.0
    assert near["T-HD-2"].report is not None
    assert len(near["T-HD-2"].report.losses) == 1
    assert all(cell.nse <= 1.0 for cell in matrix.cells)
    # Zero-shot cells are the source model evaluated on the target test split.
    prepared = prepare_watershed(targets[0][1])
    expected = evaluate(pretrained_model, prepared.samples["test"], prepared.stats)
    assert near["T-HD-1"].nse == expected.nse


def test_transfer_matrix_ignores_the_worker_count(pretrained_model, targets):
    modes = [TransferMode.T_HD_1, TransferMode.T_HD_3]
    serial = run_transfer_matrix(pretrained_model, targets, modes, FINETUNE, 1, workers=1)
    threaded = run_transfer_matrix(pretrained_model, targets, modes, FINETUNE, 1, workers=3)
    assert [cell.nse for cell in serial.cells] == [cell.nse for cell in threaded.cells]


def test_targets_can_be_renamed(pretrained_model, targets):
    _, dataset = targets[0]
    matrix = run_transfer_matrix(
        pretrained_model, [("renamed", dataset)], [TransferMode.T_HD_1], FINETUNE, 1
    )
    assert matrix.targets == ["renamed"]


def hand_matrix() -> TransferMatrix:
    rows = [
        ("near", 3, {"HD": 0.5, "T-HD-1": 0.4, "T-HD-2": 0.6, "T-HD-3": 0.6, "T-HD-4": 0.55}),
        ("far", 5, {"HD": 0.9, "T-HD-1": -0.2, "T-HD-2": 0.8, "T-HD-3": 0.7, "T-HD-4": 0.3}),
    ]
    seconds = {"HD": 2.0, "T-HD-1": 0.0, "T-HD-2": 1.0, "T-HD-3": 2.0, "T-HD-4": 3.0}
    return TransferMatrix(
        [
            MatrixCell(target, grids, mode, value, 1.0 - value, seconds[mode])
            for target, grids, values in rows
            for mode, value in values.items()
        ]
    )


def test_best_transfer():
    matrix = hand_matrix()
    assert matrix.best_transfer("near").mode == "T-HD-2"
    assert matrix.best_transfer("far").mode == "T-HD-2"
    with pytest.raises(ValueError):
        TransferMatrix([MatrixCell("x", 1, BASELINE, 0.5, 0.1, 1.0)]).best_transfer("x")


def test_format_table():
    table = format_table(hand_matrix())
    lines = table.splitlines()
    assert lines[0].split() == [
        "Watershed",
        "Grids",
        "HD",
        "T-HD-1",
        "T-HD-2",
        "T-HD-3",
        "T-HD-4",
        "Time",
        "(s)",
        "Improvement",
    ]
    assert set(lines[1]) == {"-", " "}
    near = lines[2].split()
    assert near[:7] == ["near", "3", "0.500", "0.400", "0.600*", "0.600", "0.550"]
    assert " ".join(near[7:]) == "2.00 ± 1.00 +20%"
    far = lines[3].split()
    assert far[2] == "0.900*"
    assert far[-1] == "-11%"
    note = "near: best transfer T-HD-2, the target has distinct spatial and temporal features"
    assert note in lines
    assert table.endswith("\n")


def test_matrix_csv(tmp_path):
    matrix = hand_matrix()
    path = write_matrix_csv(matrix, tmp_path / "results.csv")
    assert path.read_text(encoding="utf8").splitlines()[0] == (
        "target,grids,mode,nse,rmse,train_seconds"
    )
    read = read_matrix_csv(path)
    assert [(cell.target, cell.grids, cell.mode) for cell in read.cells] == [
        (cell.target, cell.grids, cell.mode) for cell in matrix.cells
    ]
    assert [cell.nse for cell in read.cells] == pytest.approx([cell.nse for cell in matrix.cells])
    other = tmp_path / "other.csv"
    other.write_text("a,b\n1,2\n", encoding="utf8")
    with pytest.raises(ValueError, match="columns"):
        read_matrix_csv(other)


def test_replicates(pretrained_model, targets):
    summary = run_transfer_replicates(
        pretrained_model, targets[:1], [TransferMode.T_HD_1], FINETUNE, replicates=2, iterations=1
    )
    assert len(summary.matrices) == 2
    assert set(summary.wins) == {"near"}
    assert 0 <= summary.wins["near"] <= 2
    first, second = (matrix.row("near") for matrix in summary.matrices)
    assert first["T-HD-1"].nse == second["T-HD-1"].nse
    assert first[BASELINE].nse != second[BASELINE].nse
    with pytest.raises(ValueError):
        run_transfer_replicates(pretrained_model, targets, ALL_MODES, FINETUNE, replicates=0)


@flaky(max_runs=5)
def test_finetuning_is_faster_than_training_from_scratch(pretrained_model, small_prepared):
    samples = small_prepared.samples["train"]
    config = TrainConfig(batch_size=16, lr=0.01, seed=1)
    scratch = train(build_model(pretrained_model.arch, 0), samples, TrainConfig(iterations=10))
    _, report = transfer_model(
        pretrained_model, make_transfer_plan(TransferMode.T_HD_3, 2), samples, config
    )
    assert report.wall_seconds < scratch.wall_seconds
