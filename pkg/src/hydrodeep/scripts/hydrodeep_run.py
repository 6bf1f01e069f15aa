"""
Experiment runner: generate synthetic watersheds, pretrain a source model,
transfer it to target watersheds and report the results.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from hydrodeep.config import ConfigError, RunConfig
from hydrodeep.data import (
    SPLITS,
    PreparedWatershed,
    WatershedDataset,
    generate_experiment,
    load_watershed,
    prepare_watershed,
    save_watershed,
)
from hydrodeep.metrics import evaluate, relative_improvement
from hydrodeep.network import (
    VARIANTS,
    build_model,
    load_checkpoint,
    model_grad_check_suite,
    save_checkpoint,
)
from hydrodeep.nn import GradBundle, Tensor, grad_check_suite
from hydrodeep.training import read_report_csv, train, write_report_csv
from hydrodeep.training.search import random_search
from hydrodeep.transfer import (
    BASELINE,
    MATRIX_COLUMNS,
    TransferMode,
    format_table,
    read_matrix_csv,
    run_transfer_replicates,
    write_matrix_csv,
)
from hydrodeep.utils import process_snapshot, stopwatch, versions

LOG = logging.getLogger("hydrodeep")

WATERSHEDS_FILE = "watersheds.csv"
WATERSHEDS_COLUMNS = ["name", "role", "grids", "days"]
CHECKPOINT_FILE = "model.hdc"
REPORT_FILE = "report.csv"
RESULTS_FILE = "results.csv"
EVAL_FILE = "eval.csv"
EVAL_COLUMNS = ["watershed", "split", "nse", "rmse", "n_points"]
SEARCH_FILE = "search.csv"
SEARCH_COLUMNS = ["trial", "nse", "lr", "batch_size", "arch"]
BASELINES_FILE = "baselines.csv"
BASELINES_COLUMNS = ["variant", "nse", "rmse", "train_seconds"]
MANIFEST_FILE = "manifest.txt"

LAYER_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-4

EXIT_FAILURE = 1
EXIT_ERROR = 2


def skew_largest(tensor: Tensor) -> Tensor:
    """
    Copy of a gradient with its largest-magnitude entry scaled by 1.5.
    """
    skewed = np.array(tensor, dtype=np.float64)
    if skewed.size:
        flat = skewed.reshape(-1)
        flat[int(np.argmax(np.abs(flat)))] *= 1.5
    return skewed


def skew_bundle(bundle: GradBundle) -> GradBundle:
    """
    Fault injection for layer gradient checks.
    """
    return GradBundle(
        {name: skew_largest(grad) for name, grad in bundle.params.items()}, bundle.input
    )


def skew_model_grads(grads: Dict[str, Tensor]) -> Dict[str, Tensor]:
    """
    Fault injection for full-model gradient checks.
    """
    return {name: skew_largest(grad) for name, grad in grads.items()}


def run_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    """
    The run directory, created on first use.
    """
    directory = Path(args.run_dir or config.get("paths.run_dir"))
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def check_writable(path: Path, force: bool) -> Path:
    """
    Refuse to overwrite an existing output file unless --force is given.
    """
    if path.exists() and not force:
        raise ConfigError(f"{path} already exists (use --force to overwrite)")
    return path


def read_watershed_table(directory: Path) -> pd.DataFrame:
    """
    Read the watersheds.csv index written by the gen command.
    """
    path = directory / WATERSHEDS_FILE
    if not path.exists():
        raise ConfigError(f"{path} is missing (run the gen command first)")
    table = pd.read_csv(path, dtype={"name": str, "role": str})
    if list(table.columns) != WATERSHEDS_COLUMNS:
        raise ConfigError(f"{path}: expected columns {WATERSHEDS_COLUMNS}")
    return table


def source_dir(args: argparse.Namespace, config: RunConfig) -> Path:
    """
    --data, or the source watershed under paths.data_dir.
    """
    if args.data:
        return Path(args.data)
    source, _ = config.watersheds()
    return Path(config.get("paths.data_dir")) / source.name


def prepare(config: RunConfig, directory: Path) -> PreparedWatershed:
    """
    Load a watershed and split it with the configured fractions.
    """
    dataset = load_watershed(directory)
    train_fraction, validation_fraction = config.split_fractions()
    return prepare_watershed(dataset, train_fraction, validation_fraction)


def write_manifest(directory: Path, command: str, config: RunConfig, wall_seconds: float) -> Path:
    """
    Append this command's block to the run manifest.
    """
    lines = [f"command = {command}", f"config_hash = {config.config_hash}"]
    lines += [f"{name}_version = {value}" for name, value in versions().items()]
    lines.append(f"wall_seconds = {wall_seconds:.6f}")
    lines += [f"{name} = {value:.6f}" for name, value in process_snapshot().items()]
    path = directory / MANIFEST_FILE
    with path.open("a", encoding="utf8") as handle:
        handle.write("\n".join(lines) + "\n\n")
    return path


def cmd_gen(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Generate the source and target watersheds declared by synth.*.
    """
    out_dir = Path(args.out_dir or config.get("paths.data_dir"))
    if out_dir.exists() and any(out_dir.iterdir()) and not args.force:
        raise ConfigError(f"{out_dir} is not empty (use --force to overwrite)")
    source, targets = config.watersheds()
    generated = generate_experiment(config.synth_base(), source, targets)
    rows = []
    for item in generated:
        save_watershed(item.dataset, out_dir / item.decl.name)
        rows.append([item.decl.name, item.decl.role, item.dataset.n_grids, item.dataset.n_days])
        print(
            f"{item.decl.name}: role={item.decl.role} grids={item.dataset.n_grids} "
            f"days={item.dataset.n_days}"
        )
    pd.DataFrame(rows, columns=WATERSHEDS_COLUMNS).to_csv(
        out_dir / WATERSHEDS_FILE, index=False, lineterminator="\n"
    )
    return 0


def cmd_pretrain(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Train the configured architecture on the source watershed.
    """
    directory = run_dir(args, config)
    checkpoint = check_writable(Path(args.checkpoint or directory / CHECKPOINT_FILE), args.force)
    prepared = prepare(config, source_dir(args, config))
    model = build_model(config.arch_spec(), config.get_int("arch.seed"))
    report = train(model, prepared.samples["train"], config.train_config())
    save_checkpoint(report.model, checkpoint)
    scores = {
        f"{split}_nse": evaluate(report.model, prepared.samples[split], prepared.stats).nse
        for split in SPLITS
    }
    write_report_csv(report, directory / REPORT_FILE, {"watershed": prepared.name, **scores})
    print(
        f"Pretrained on {prepared.name} in {report.wall_seconds:.2f}s "
        f"({len(report.losses)} iterations)"
    )
    for split in SPLITS:
        print(f"{split} NSE: {scores[f'{split}_nse']:.6f}")
    print(f"Checkpoint written to {checkpoint}")
    return 0


def load_targets(directory: Path) -> List[Tuple[str, WatershedDataset]]:
    """
    Every non-source watershed listed in a generated data directory.
    """
    table = read_watershed_table(directory)
    targets = table[table["role"] != "source"]
    if targets.empty:
        raise ConfigError(f"{directory / WATERSHEDS_FILE} lists no target watersheds")
    return [(name, load_watershed(directory / name, name)) for name in targets["name"]]


def cmd_transfer(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Run the transfer matrix of every target against the pretrained source.
    """
    directory = run_dir(args, config)
    checkpoint = Path(args.checkpoint or directory / CHECKPOINT_FILE)
    targets = load_targets(Path(args.targets or config.get("paths.data_dir")))
    train_fraction, validation_fraction = config.split_fractions()
    replicates = config.get_int("transfer.replicates")
    summary = run_transfer_replicates(
        checkpoint,
        targets,
        config.transfer_modes(),
        config.train_config(),
        replicates,
        iterations=config.get_int("transfer.iterations"),
        workers=config.get_int("transfer.workers"),
        train_fraction=train_fraction,
        validation_fraction=validation_fraction,
    )
    for number, matrix in enumerate(summary.matrices, start=1):
        name = RESULTS_FILE if replicates == 1 else f"results_{number}.csv"
        write_matrix_csv(matrix, directory / name)
        if replicates > 1:
            print(f"Replicate {number}")
        print(format_table(matrix))
    if replicates > 1:
        for target, wins in summary.wins.items():
            print(f"{target}: best transfer beat {BASELINE} in {wins}/{replicates} replicates")
    report_path = directory / REPORT_FILE
    if report_path.exists():
        pretrain_seconds = float(read_report_csv(report_path).summary["wall_seconds"])
        finetune = [
            cell.train_seconds
            for matrix in summary.matrices
            for cell in matrix.cells
            if cell.mode not in (BASELINE, TransferMode.T_HD_1.value)
        ]
        if finetune and pretrain_seconds > 0:
            ratio = 100 * float(np.mean(finetune)) / pretrain_seconds
            print(f"Mean finetuning time is {ratio:.1f}% of the pretraining time")
    return 0


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Zero-shot evaluation of a checkpoint on one split of a watershed.
    """
    directory = run_dir(args, config)
    model = load_checkpoint(args.checkpoint or directory / CHECKPOINT_FILE)
    prepared = prepare(config, source_dir(args, config))
    result = evaluate(model, prepared.samples[args.split], prepared.stats)
    path = directory / EVAL_FILE
    pd.DataFrame(
        [[prepared.name, args.split, result.nse, result.rmse, result.n_points]],
        columns=EVAL_COLUMNS,
    ).to_csv(path, mode="a", header=not path.exists(), index=False, lineterminator="\n")
    print(
        f"{prepared.name} {args.split}: NSE {result.nse:.6f} RMSE {result.rmse:.6f} "
        f"({result.n_points} points)"
    )
    return 0


def cmd_gradcheck(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Compare analytic gradients with finite differences for every layer kind
    and every model variant.
    """
    layer_tamper = skew_bundle if args.inject_fault else None
    model_tamper = skew_model_grads if args.inject_fault else None
    failed = False
    for kind, error in grad_check_suite(args.configs, tamper=layer_tamper).items():
        status = "ok" if error < LAYER_TOLERANCE else "FAILED"
        failed = failed or error >= LAYER_TOLERANCE
        print(f"layer {kind}: max relative error {error:.3e} {status}")
    suite = model_grad_check_suite(args.model_configs, tamper=model_tamper)
    for variant, error in suite.items():
        status = "ok" if error < MODEL_TOLERANCE else "FAILED"
        failed = failed or error >= MODEL_TOLERANCE
        print(f"model {variant}: max relative error {error:.3e} {status}")
    return EXIT_FAILURE if failed else 0


def cmd_search(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Random hyperparameter search on the source validation split.
    """
    directory = run_dir(args, config)
    prepared = prepare(config, source_dir(args, config))
    result = random_search(
        config.search_space(),
        prepared.samples["fit"],
        prepared.samples["validation"],
        config.train_config(),
        workers=config.get_int("search.workers"),
    )
    rows = [
        [
            record.trial,
            record.nse,
            record.config.lr,
            record.config.batch_size,
            ";".join(f"{key}={value}" for key, value in record.arch.fields().items()),
        ]
        for record in result.trials
    ]
    pd.DataFrame(rows, columns=SEARCH_COLUMNS).to_csv(
        directory / SEARCH_FILE, index=False, lineterminator="\n"
    )
    for row in rows:
        print(f"trial {row[0]}: nse {row[1]:.4f} lr {row[2]:.3g} batch {row[3]} {row[4]}")
    print(f"Best trial {result.best.trial} (validation NSE {result.best.nse:.4f}):")
    print(f"train.lr = {result.config.lr!r}")
    print(f"train.batch_size = {result.config.batch_size}")
    for key, value in result.arch.fields().items():
        print(f"arch.{key} = {value}")
    return 0


def cmd_baselines(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Train every model variant with the same budget and seeds and compare
    their test NSE.
    """
    directory = run_dir(args, config)
    prepared = prepare(config, source_dir(args, config))
    arch = config.arch_spec()
    seed = config.get_int("arch.seed")
    train_config = config.train_config()
    rows = []
    scores: Dict[str, float] = {}
    for variant in VARIANTS:
        report = train(
            build_model(arch.as_variant(variant), seed), prepared.samples["train"], train_config
        )
        result = evaluate(report.model, prepared.samples["test"], prepared.stats)
        scores[variant] = result.nse
        rows.append([variant, result.nse, result.rmse, report.wall_seconds])
        print(
            f"{variant}: test NSE {result.nse:.4f} RMSE {result.rmse:.4f} "
            f"({report.wall_seconds:.2f}s)"
        )
    pd.DataFrame(rows, columns=BASELINES_COLUMNS).to_csv(
        directory / BASELINES_FILE, index=False, lineterminator="\n"
    )
    for variant in VARIANTS[1:]:
        if scores[variant] == 0:
            print(f"hydrodeep vs {variant}: undefined (zero baseline NSE)")
            continue
        gain = relative_improvement(scores[variant], scores[VARIANTS[0]])
        print(f"hydrodeep vs {variant}: {gain:+.1f}%")
    return 0


def cmd_report(args: argparse.Namespace, config: RunConfig) -> int:
    """
    Summarize a training report or format a transfer results file.
    """
    path = Path(args.path)
    with path.open(encoding="utf8") as handle:
        header = handle.readline().strip().split(",")
    if header == MATRIX_COLUMNS:
        print(format_table(read_matrix_csv(path)), end="")
        return 0
    report = read_report_csv(path)
    losses = report.losses["loss"]
    print(f"{len(losses)} iterations")
    if len(losses):
        print(
            f"loss: first {losses.iloc[0]:.6g} last {losses.iloc[-1]:.6g} min {losses.min():.6g}"
        )
    for key, value in report.summary.items():
        print(f"{key}: {value}")
    return 0


COMMANDS: Dict[str, str] = {
    "gen": "generate synthetic watersheds",
    "pretrain": "train the source model",
    "transfer": "run the transfer matrix on the target watersheds",
    "eval": "evaluate a checkpoint on a watershed split",
    "gradcheck": "check analytic gradients against finite differences",
    "search": "random hyperparameter search",
    "baselines": "compare against the CNN-only and LSTM-only baselines",
    "report": "print a training report or a results table",
}

READ_ONLY_COMMANDS = ("report",)


def build_parser() -> argparse.ArgumentParser:
    """
    The argument parser of the hydrodeep command.
    """
    parser = argparse.ArgumentParser(
        prog="hydrodeep", description="Watershed discharge prediction with transfer learning"
    )
    parser.add_argument("--config", "-c", type=Path, default=None, help="run configuration file")
    parser.add_argument("--seed", type=int, default=None, help="override every configured seed")
    parser.add_argument(
        "--force", action="store_true", default=False, help="overwrite existing outputs"
    )
    parser.add_argument("--run-dir", type=Path, default=None, help="defaults to paths.run_dir")
    parser.add_argument("--verbose", "-v", action="count", default=0, help="more logging")
    commands = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    parsers = {name: commands.add_parser(name, help=text) for name, text in COMMANDS.items()}

    parsers["gen"].add_argument("--out-dir", type=Path, default=None)
    for name in ("pretrain", "eval", "search", "baselines"):
        parsers[name].add_argument(
            "--data", type=Path, default=None, help="watershed directory (default: the source)"
        )
    for name in ("pretrain", "transfer", "eval"):
        parsers[name].add_argument("--checkpoint", type=Path, default=None)
    parsers["transfer"].add_argument(
        "--targets", type=Path, default=None, help="directory written by gen"
    )
    parsers["eval"].add_argument("--split", choices=SPLITS + ("fit",), default="test")
    parsers["gradcheck"].add_argument("--configs", type=int, default=100)
    parsers["gradcheck"].add_argument("--model-configs", type=int, default=5)
    parsers["gradcheck"].add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    parsers["report"].add_argument("path", type=Path)
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """
    The configuration file (if any) with the --seed override applied.
    """
    config = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point for the hydrodeep script.
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handler: Callable[[argparse.Namespace, RunConfig], int] = globals()[f"cmd_{args.command}"]
    try:
        config = load_config(args)
        with stopwatch() as watch:
            status = handler(args, config)
        if args.command not in READ_ONLY_COMMANDS:
            write_manifest(run_dir(args, config), args.command, config, watch.seconds)
    except (ValueError, OSError) as exc:
        LOG.debug("%s failed", args.command, exc_info=True)
        print(f"hydrodeep {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return status


if __name__ == "__main__":
    sys.exit(main())
