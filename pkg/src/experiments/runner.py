"""
Experiment commands: train, eval, lambda sweep, correlation report and
feature dump. Each command takes a resolved ExperimentConfig and writes
its artifacts under the experiment's output directory.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd

from src.autodiff.tensor import no_grad, set_precision
from src.data.datasets import Dataset, load_cifar10, load_idx, synthetic_dataset
from src.experiments.config_loader import (
    RESOLVED_CONFIG_NAME,
    load_experiment_config,
    with_updates,
    write_resolved_config,
)
from src.models.spec_schema import DatasetName, DatasetSelection, ExperimentConfig, MetricsRecord
from src.nn.catalog import lookup
from src.nn.network import StagedNetwork, build_model, forward
from src.training.trainer import evaluate, resolve_taps, stage_statistics, train
from src.utils.artifacts import (
    final_test_row,
    metrics_frame,
    summarize,
    write_frame_csv,
    write_metrics_csv,
)
from src.utils.checkpoint import read_checkpoint, save_model
from src.utils.config import config
from src.utils.errors import ConfigError, DataError
from src.utils.feature_dump import FeatureDump, export_pgm, write_feature_dump
from src.utils.logger import get_logger, log_artifact_written, log_run_start, log_sweep_entry

log = get_logger("experiments.runner")

PathLike = Union[str, Path]

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]
CIFAR_SUBDIR = "cifar-10-batches-bin"

CHECKPOINT_NAME = "model.mfdckpt"
METRICS_NAME = "metrics.csv"


@dataclass
class RunOutcome:
    """Artifacts and final numbers of one training run."""
    output_dir: Path
    records: List[MetricsRecord]
    final_test: Dict[str, float]
    checkpoint: Path


@dataclass
class DumpOutcome:
    path: Path
    pgm_files: List[Path] = field(default_factory=list)


def resolve_data_dir(selection: DatasetSelection) -> Path:
    """--data-dir / config file value first, then DECORR_DATA_DIR."""
    chosen = selection.data_dir or config.data.data_dir
    if not chosen:
        raise DataError(f"{selection.name.value} needs a data directory: pass --data-dir or set DECORR_DATA_DIR")
    root = Path(chosen)
    if not root.is_dir():
        raise DataError(f"Data directory not found: {root}")
    return root


def _locate(root: Path, name: str) -> Path:
    for directory in (root, root / "mnist", root / CIFAR_SUBDIR):
        for candidate in (directory / name, directory / f"{name}.gz"):
            if candidate.is_file():
                return candidate
    raise DataError(f"Missing data file {name} under {root}")


def load_datasets(selection: DatasetSelection) -> Tuple[Dataset, Dataset]:
    """
    Load the (train, test) pair named by ``selection``.

    Test data is normalized with the training split's statistics.
    """
    if selection.name == DatasetName.SYNTHETIC:
        train_set = synthetic_dataset(selection.classes, selection.per_class, selection.synthetic_seed)
        test_set = synthetic_dataset(
            selection.classes, selection.test_per_class, selection.synthetic_seed,
            split="test", stats=train_set.stats,
        )
        if selection.train_subset:
            train_set = train_set.head(selection.train_subset)
        if selection.test_subset:
            test_set = test_set.head(selection.test_subset)
        return train_set, test_set

    root = resolve_data_dir(selection)
    if selection.name == DatasetName.MNIST:
        images, labels = (_locate(root, name) for name in MNIST_FILES["train"])
        train_set = load_idx(images, labels, limit=selection.train_subset)
        images, labels = (_locate(root, name) for name in MNIST_FILES["test"])
        test_set = load_idx(images, labels, stats=train_set.stats, limit=selection.test_subset)
        return train_set, test_set

    train_set = load_cifar10([_locate(root, name) for name in CIFAR_TRAIN_FILES], limit=selection.train_subset)
    test_set = load_cifar10(
        [_locate(root, name) for name in CIFAR_TEST_FILES],
        stats=train_set.stats, limit=selection.test_subset,
    )
    return train_set, test_set


def build_for(experiment: ExperimentConfig, dataset: Dataset) -> StagedNetwork:
    spec = lookup(experiment.model, dataset.sample_shape, dataset.class_count)
    return build_model(spec, experiment.train.seed)


def run_id_for(experiment: ExperimentConfig) -> str:
    return f"{experiment.model}-lambda{experiment.train.lambda_:g}-seed{experiment.train.seed}"


def run_training(experiment: ExperimentConfig) -> RunOutcome:
    """One seeded training run: metrics.csv, model.mfdckpt and the resolved config."""
    set_precision(experiment.train.precision)
    run_id = run_id_for(experiment)
    out_dir = Path(experiment.output_dir)
    log_run_start(
        run_id, experiment.model, experiment.dataset.name.value, experiment.train.lambda_,
        experiment.train.seed, experiment.train.epochs, logger_instance=log,
    )

    train_set, test_set = load_datasets(experiment.dataset)
    model = build_for(experiment, train_set)
    model, records = train(
        model, train_set, test_set, experiment.train,
        augmentation=experiment.augmentation,
        eval_batch_size=experiment.eval_batch_size,
        run_id=run_id,
        prefetch_depth=config.data.prefetch_depth,
    )

    log_artifact_written(str(write_resolved_config(out_dir, experiment)), "config", logger_instance=log)
    log_artifact_written(str(write_metrics_csv(out_dir / METRICS_NAME, records)), "metrics", logger_instance=log)
    checkpoint = save_model(model, out_dir / CHECKPOINT_NAME, run_id)
    return RunOutcome(out_dir, records, final_test_row(records), checkpoint)


def cmd_train(experiment: ExperimentConfig) -> List[RunOutcome]:
    """
    Train ``experiment.repeats`` runs with seeds seed, seed+1, ...

    A single run writes directly into the output directory; repeated runs
    go to repeat_<k>/ and a summary.csv with per-column mean and std is
    written alongside.
    """
    out_dir = Path(experiment.output_dir)
    if experiment.repeats == 1:
        return [run_training(experiment)]

    outcomes = []
    for k in range(experiment.repeats):
        child = with_updates(
            experiment,
            repeats=1,
            output_dir=str(out_dir / f"repeat_{k}"),
            train__seed=experiment.train.seed + k,
        )
        outcomes.append(run_training(child))

    write_resolved_config(out_dir, experiment)
    summary = summarize([outcome.final_test for outcome in outcomes])
    path = write_frame_csv(out_dir / "summary.csv", pd.DataFrame([summary]))
    log_artifact_written(str(path), "summary", logger_instance=log)
    return outcomes


def _sweep_entry(experiment: ExperimentConfig) -> Dict[str, float]:
    outcomes = cmd_train(experiment)
    for k, outcome in enumerate(outcomes):
        last = [r for r in outcome.records if r.split == "test"][-1]
        log_sweep_entry(
            experiment.train.lambda_, k, last.accuracy, last.mean_abs_corr_per_stage, logger_instance=log,
        )
    return {"lambda": experiment.train.lambda_, **summarize([o.final_test for o in outcomes])}


def cmd_lambda_sweep(
    experiment: ExperimentConfig,
    lambdas: Sequence[float],
    include_baseline: bool = False,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Train one configuration per lambda with identical seeds and data order.

    Each lambda writes into lambda_<value>/ under the output directory;
    lambda_sweep.csv collects accuracy and per-stage mean |corr| (mean and
    std over repeats) per lambda in the order given.

    Raises:
        ConfigError: fewer than two values, duplicates, negative values,
            or workers < 1
    """
    values = [float(v) for v in lambdas]
    if include_baseline and 0.0 not in values:
        values.insert(0, 0.0)
    if len(values) < 2:
        raise ConfigError("lambda sweep needs at least two values")
    if len(set(values)) != len(values):
        raise ConfigError(f"duplicate lambda values in {values}")
    if any(v < 0 for v in values):
        raise ConfigError(f"lambda values must be >= 0, got {values}")
    if workers < 1:
        raise ConfigError(f"workers must be >= 1, got {workers}")

    out_dir = Path(experiment.output_dir)
    entries = [
        with_updates(experiment, train__lambda=value, output_dir=str(out_dir / f"lambda_{value:g}"))
        for value in values
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_entry, entries))
    else:
        rows = [_sweep_entry(entry) for entry in entries]

    frame = pd.DataFrame(rows)
    write_resolved_config(out_dir, experiment)
    path = write_frame_csv(out_dir / "lambda_sweep.csv", frame)
    log_artifact_written(str(path), "lambda_sweep", logger_instance=log)
    return frame


def experiment_for_checkpoint(
    config_path: Optional[PathLike],
    checkpoint: PathLike,
    overrides: Optional[Dict[str, object]] = None,
) -> ExperimentConfig:
    """Use --config if given, else the config.resolved.json saved next to the checkpoint."""
    if config_path is None:
        sibling = Path(checkpoint).parent / RESOLVED_CONFIG_NAME
        if sibling.is_file():
            config_path = sibling
    return load_experiment_config(config_path, overrides)


def load_trained(
    experiment: ExperimentConfig,
    checkpoint: PathLike,
) -> Tuple[StagedNetwork, Dataset, Dataset]:
    """
    Rebuild the configured model and restore ``checkpoint`` into it.

    Raises:
        FileNotFoundError: missing checkpoint
        ConfigError: checkpoint was written for a different model or dataset
    """
    set_precision(experiment.train.precision)
    train_set, test_set = load_datasets(experiment.dataset)
    model = build_for(experiment, train_set)
    digest, state = read_checkpoint(checkpoint)
    if digest != model.spec.digest():
        raise ConfigError(
            f"{checkpoint} does not match model {model.spec.name} on {train_set.name}"
        )
    model.load_state_dict(state)
    return model, train_set, test_set


def _pick_split(split: str, train_set: Dataset, test_set: Dataset) -> Dataset:
    if split not in ("train", "test"):
        raise ConfigError(f"Unknown split: {split}")
    return train_set if split == "train" else test_set


def cmd_eval(experiment: ExperimentConfig, checkpoint: PathLike) -> MetricsRecord:
    """Evaluate a checkpoint on the test split and write eval.csv."""
    model, _, test_set = load_trained(experiment, checkpoint)
    record = evaluate(
        model, test_set, resolve_taps(model, experiment.train),
        lambda_=experiment.train.lambda_,
        batch_size=experiment.eval_batch_size,
        epoch=experiment.train.epochs - 1,
        split="test",
    )
    path = write_frame_csv(Path(experiment.output_dir) / "eval.csv", metrics_frame([record]))
    log_artifact_written(str(path), "eval", logger_instance=log)
    return record


def cmd_corr_report(
    experiment: ExperimentConfig,
    checkpoint: PathLike,
    stages: Optional[Sequence[int]] = None,
    split: str = "test",
) -> pd.DataFrame:
    """
    Per-stage correlation statistics of a trained model, written to
    corr_report.csv. Stages default to every declared tap point.
    """
    model, train_set, test_set = load_trained(experiment, checkpoint)
    dataset = _pick_split(split, train_set, test_set)
    declared = model.spec.declared_taps
    chosen = list(declared) if not stages else sorted(set(stages))
    unknown = [s for s in chosen if s not in declared]
    if unknown:
        raise ConfigError(f"Unknown stage(s) {unknown}; model {model.spec.name} taps {list(declared)}")

    statistics = stage_statistics(model, dataset, chosen, experiment.eval_batch_size)
    frame = pd.DataFrame(
        [
            {
                "stage": s.stage_id,
                "channels": s.channels,
                "mean_abs_corr": s.mean_abs_corr,
                "mfd_loss": s.mfd_loss,
                "zero_variance_channels": s.zero_variance_channels,
                "split": split,
            }
            for s in (statistics[stage] for stage in chosen if stage in statistics)
        ],
        columns=["stage", "channels", "mean_abs_corr", "mfd_loss", "zero_variance_channels", "split"],
    )
    path = write_frame_csv(Path(experiment.output_dir) / "corr_report.csv", frame)
    log_artifact_written(str(path), "corr_report", logger_instance=log)
    return frame


def cmd_dump_features(
    experiment: ExperimentConfig,
    checkpoint: PathLike,
    stage: int,
    samples: int = 4,
    pgm: bool = True,
    max_channels: Optional[int] = None,
) -> DumpOutcome:
    """
    Dump the tapped activations of the first ``samples`` test images at
    ``stage`` to features_stage<k>.mfdfmap, plus one PGM per sample and
    channel unless disabled.
    """
    model, _, test_set = load_trained(experiment, checkpoint)
    if stage not in model.spec.declared_taps:
        raise ConfigError(f"Unknown stage {stage}; model {model.spec.name} taps {list(model.spec.declared_taps)}")
    if not 1 <= samples <= len(test_set):
        raise ConfigError(f"samples must be in [1, {len(test_set)}], got {samples}")
    if max_channels is not None and max_channels < 1:
        raise ConfigError(f"max_channels must be >= 1, got {max_channels}")

    subset = test_set.head(samples)
    with no_grad():
        result = forward(model, subset.tensor(), [stage], mode="eval")
    dump = FeatureDump(stage_id=stage, values=result.tap(stage).tensor.data)

    out_dir = Path(experiment.output_dir)
    path = write_feature_dump(out_dir / f"features_stage{stage}.mfdfmap", dump)
    log_artifact_written(str(path), "feature_dump", logger_instance=log)
    outcome = DumpOutcome(path)
    if pgm:
        outcome.pgm_files = export_pgm(dump, out_dir / f"features_stage{stage}_pgm", max_channels)
        log.info(f"Wrote {len(outcome.pgm_files)} PGM files", extra={"stage": stage})
    return outcome
