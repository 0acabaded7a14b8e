"""
Training loop for the joint objective and the evaluation pass.

Each epoch iterates the training batches (forward with taps, joint loss,
backward, SGD step) and then evaluates the test split without recording
a tape. Both splits produce a MetricsRecord.
"""

import time
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.autodiff.tensor import backward, no_grad
from src.data.batching import batches
from src.data.datasets import Dataset
from src.decorrelation.correlation import correlation_matrix, mean_abs_offdiag
from src.decorrelation.losses import joint_loss, mfd_loss, softmax_cross_entropy
from src.models.spec_schema import AugmentationPolicy, MetricsRecord, TrainConfig
from src.nn.network import StagedNetwork, forward
from src.training.optimizer import OptimizerState, lr_at, sgd_step
from src.utils.errors import ConfigError, NumericError, TrainingAborted
from src.utils.logger import get_logger, log_epoch_metrics

log = get_logger("training.trainer")

RecordCallback = Callable[[MetricsRecord], None]


@dataclass
class StageStatistics:
    """Correlation summary of one stage over an evaluation pass."""
    stage_id: int
    channels: int
    mean_abs_corr: float
    mfd_loss: float
    zero_variance_channels: int
    batches: int


class _StageAccumulator:
    """Per-stage running sums of mfd loss and mean |corr| over batches."""

    def __init__(self):
        self.mfd: Dict[int, List[float]] = defaultdict(list)
        self.abs_corr: Dict[int, List[float]] = defaultdict(list)
        self.always_zero: Dict[int, set] = {}
        self.channels: Dict[int, int] = {}

    def add(self, stage_id: int, F, mfd_value: float) -> None:
        self.mfd[stage_id].append(mfd_value)
        self.abs_corr[stage_id].append(mean_abs_offdiag(F))
        self.channels[stage_id] = F.dimension
        seen = self.always_zero.get(stage_id)
        self.always_zero[stage_id] = set(F.zero_variance_channels) if seen is None else seen & F.zero_variance_channels

    def mfd_means(self) -> Dict[int, float]:
        return {s: float(np.mean(v)) for s, v in sorted(self.mfd.items())}

    def abs_corr_means(self) -> Dict[int, float]:
        return {s: float(np.mean(v)) for s, v in sorted(self.abs_corr.items())}

    def statistics(self) -> Dict[int, StageStatistics]:
        mfd, corr = self.mfd_means(), self.abs_corr_means()
        return {
            s: StageStatistics(
                stage_id=s,
                channels=self.channels[s],
                mean_abs_corr=corr[s],
                mfd_loss=mfd[s],
                zero_variance_channels=len(self.always_zero[s]),
                batches=len(self.abs_corr[s]),
            )
            for s in corr
        }


def resolve_taps(model: StagedNetwork, config: TrainConfig) -> List[int]:
    """Stages to tap: the configured subset, or every declared tap point."""
    declared = model.spec.declared_taps
    if config.tap_stages is None:
        taps = list(declared)
    else:
        unknown = set(config.tap_stages) - set(declared)
        if unknown:
            raise ConfigError(f"tap_stages {sorted(unknown)} not declared by model {model.spec.name}")
        taps = sorted(config.tap_stages)
    if config.lambda_ > 0 and not taps:
        raise ConfigError("lambda > 0 requires at least one tapped stage")
    return taps


def _check_compatible(model: StagedNetwork, dataset: Dataset) -> None:
    if dataset.class_count != model.num_classes:
        raise ConfigError(
            f"{dataset.name} has {dataset.class_count} classes, model expects {model.num_classes}"
        )
    if dataset.sample_shape != tuple(model.spec.input_shape):
        raise ConfigError(
            f"{dataset.name} samples are {dataset.sample_shape}, model expects {tuple(model.spec.input_shape)}"
        )


def _evaluation_pass(
    model: StagedNetwork,
    dataset: Dataset,
    tap_stages: Sequence[int],
    batch_size: int,
) -> Tuple[float, float, _StageAccumulator]:
    correct = 0
    loss_sum = 0.0
    stages = _StageAccumulator()
    with no_grad():
        for images, labels in batches(dataset, min(batch_size, len(dataset)), 0, training=False):
            result = forward(model, images, tap_stages, mode="eval")
            loss_sum += softmax_cross_entropy(result.logits, labels).item() * len(labels)
            correct += int((result.logits.data.argmax(axis=1) == labels).sum())
            for tap in result.taps:
                if tap.batch_size < 2:
                    continue
                F = correlation_matrix(tap)
                stages.add(tap.stage_id, F, mfd_loss(F).item())
    n = len(dataset)
    return correct / n, loss_sum / n, stages


def evaluate(
    model: StagedNetwork,
    dataset: Dataset,
    tap_stages: Iterable[int],
    lambda_: float = 0.0,
    batch_size: int = 256,
    epoch: int = 0,
    split: str = "test",
) -> MetricsRecord:
    """
    Eval-mode pass over ``dataset`` without tape recording.

    Accuracy is the fraction of argmax(logits) == label. Stage statistics
    are computed per batch and averaged over batches; batches with fewer
    than two samples contribute no correlation.
    """
    started = time.perf_counter()
    _check_compatible(model, dataset)
    accuracy, softmax, stages = _evaluation_pass(model, dataset, sorted(tap_stages), batch_size)
    mfd = stages.mfd_means()
    return MetricsRecord(
        epoch=epoch,
        split=split,
        softmax_loss=softmax,
        mfd_loss_per_stage=mfd,
        total_loss=softmax + lambda_ * sum(mfd.values()),
        accuracy=accuracy,
        mean_abs_corr_per_stage=stages.abs_corr_means(),
        wall_seconds=time.perf_counter() - started,
    )


def stage_statistics(
    model: StagedNetwork,
    dataset: Dataset,
    stages: Iterable[int],
    batch_size: int = 256,
) -> Dict[int, StageStatistics]:
    """Per-stage mean |corr|, mfd loss and always-zero-variance channel count."""
    _check_compatible(model, dataset)
    _, _, accumulated = _evaluation_pass(model, dataset, sorted(stages), batch_size)
    return accumulated.statistics()


def train(
    model: StagedNetwork,
    train_set: Dataset,
    test_set: Dataset,
    config: TrainConfig,
    augmentation: Optional[AugmentationPolicy] = None,
    eval_batch_size: int = 256,
    run_id: str = "run",
    prefetch_depth: int = 0,
    on_record: Optional[RecordCallback] = None,
) -> Tuple[StagedNetwork, List[MetricsRecord]]:
    """
    Optimize ``model`` on the joint objective.

    Args:
        model: Built network, updated in place
        train_set: Training split
        test_set: Evaluation split
        config: Schedule, lambda, taps and optimizer settings
        augmentation: Training-time augmentation policy (None disables)
        eval_batch_size: Batch size of the evaluation pass
        run_id: Identifier used in log records
        prefetch_depth: Bounded prefetch queue depth (0 disables)
        on_record: Called with each MetricsRecord as it is produced

    Returns:
        (model, records) with one train and one test record per epoch

    Raises:
        ConfigError: incompatible model/dataset/taps
        TrainingAborted: a loss term became non-finite
    """
    _check_compatible(model, train_set)
    _check_compatible(model, test_set)
    taps = resolve_taps(model, config)
    state = OptimizerState.for_model(model)
    records: List[MetricsRecord] = []

    def _emit(record: MetricsRecord) -> None:
        records.append(record)
        log_epoch_metrics(
            run_id, record.epoch, record.split, record.softmax_loss, record.total_loss,
            record.accuracy, record.mean_abs_corr_per_stage, record.wall_seconds,
            logger_instance=log,
        )
        if on_record is not None:
            on_record(record)

    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        started = time.perf_counter()
        softmax_sum = total_sum = 0.0
        correct = seen = steps = 0
        stages = _StageAccumulator()

        stream = batches(
            train_set, config.batch_size, config.seed, augmentation,
            epoch=epoch, training=True, prefetch_depth=prefetch_depth,
        )
        for step, (images, labels) in enumerate(stream):
            model.zero_grad()
            try:
                result = forward(model, images, taps, mode="train")
                breakdown = joint_loss(result.logits, labels, result.taps, config.lambda_)
            except NumericError as e:
                term = e.op or "forward"
                raise TrainingAborted(
                    f"non-finite value in {term} at epoch {epoch}, step {step}", epoch, step, term
                ) from e
            backward(breakdown.objective)
            sgd_step(model, None, state, lr, config.momentum, config.weight_decay)

            softmax_sum += breakdown.softmax_loss
            total_sum += breakdown.total
            correct += int((result.logits.data.argmax(axis=1) == labels).sum())
            seen += len(labels)
            steps += 1
            mfd_by_stage = dict(breakdown.mfd_per_stage)
            for stage_id, F in breakdown.correlations.items():
                stages.add(stage_id, F, mfd_by_stage[stage_id])

        _emit(MetricsRecord(
            epoch=epoch,
            split="train",
            softmax_loss=softmax_sum / steps,
            mfd_loss_per_stage=stages.mfd_means(),
            total_loss=total_sum / steps,
            accuracy=correct / seen,
            mean_abs_corr_per_stage=stages.abs_corr_means(),
            wall_seconds=time.perf_counter() - started,
        ))
        _emit(evaluate(
            model, test_set, taps, lambda_=config.lambda_,
            batch_size=eval_batch_size, epoch=epoch, split="test",
        ))
        log.debug(f"epoch {epoch} done", extra={"lr": lr, "steps": steps, "run_id": run_id})

    return model, records
