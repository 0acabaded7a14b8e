"""
Artifact writing: atomic file replacement and the metrics/summary CSVs.
"""

import os
import tempfile
from contextlib import suppress
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np
import pandas as pd

from src.models.spec_schema import MetricsRecord

PathLike = Union[str, Path]

METRICS_BASE_COLUMNS = ["epoch", "split", "softmax_loss", "total_loss", "accuracy", "wall_seconds"]


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """Write via a temporary file in the destination directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        with suppress(FileNotFoundError):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path: PathLike, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_frame_csv(path: PathLike, frame: pd.DataFrame) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False))


def _stage_ids(records: Iterable[MetricsRecord]) -> List[int]:
    stages = set()
    for record in records:
        stages.update(record.mfd_loss_per_stage)
        stages.update(record.mean_abs_corr_per_stage)
    return sorted(stages)


def metrics_frame(records: Sequence[MetricsRecord]) -> pd.DataFrame:
    """
    One row per MetricsRecord: the base columns, then mfd_stage_<i> for
    every stage, then meanabscorr_stage_<i> for every stage. Missing
    values are left empty.
    """
    stages = _stage_ids(records)
    columns = (
        METRICS_BASE_COLUMNS
        + [f"mfd_stage_{s}" for s in stages]
        + [f"meanabscorr_stage_{s}" for s in stages]
    )
    rows = []
    for record in records:
        row: Dict[str, object] = {
            "epoch": record.epoch,
            "split": record.split,
            "softmax_loss": record.softmax_loss,
            "total_loss": record.total_loss,
            "accuracy": record.accuracy,
            "wall_seconds": record.wall_seconds,
        }
        for s in stages:
            row[f"mfd_stage_{s}"] = record.mfd_loss_per_stage.get(s, np.nan)
            row[f"meanabscorr_stage_{s}"] = record.mean_abs_corr_per_stage.get(s, np.nan)
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)


def write_metrics_csv(path: PathLike, records: Sequence[MetricsRecord]) -> Path:
    return write_frame_csv(path, metrics_frame(records))


def final_test_row(records: Sequence[MetricsRecord]) -> Dict[str, float]:
    """Flatten the last test record into accuracy + meanabscorr_stage_<i> values."""
    tests = [r for r in records if r.split == "test"]
    if not tests:
        return {}
    last = tests[-1]
    row = {"accuracy": last.accuracy, "softmax_loss": last.softmax_loss}
    for s, value in sorted(last.mean_abs_corr_per_stage.items()):
        row[f"meanabscorr_stage_{s}"] = value
    return row


def summarize(rows: Sequence[Dict[str, float]]) -> Dict[str, float]:
    """Mean and population std of every column across repeated runs."""
    frame = pd.DataFrame(list(rows))
    summary: Dict[str, float] = {"repeats": len(frame)}
    for column in frame.columns:
        summary[f"{column}_mean"] = float(frame[column].mean())
        summary[f"{column}_std"] = float(frame[column].std(ddof=0))
    return summary
