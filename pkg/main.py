"""
MFD Decorrelation Toolkit
Command-line entry point for training and analysis experiments.

    python main.py [global flags] train
    python main.py [global flags] eval --checkpoint runs/x/model.mfdckpt
    python main.py [global flags] lambda-sweep --lambdas 0.1,1,10 --include-baseline
    python main.py [global flags] corr-report --checkpoint runs/x/model.mfdckpt
    python main.py [global flags] dump-features --checkpoint runs/x/model.mfdckpt --stage 0

Tables go to stdout; logs and error messages go to stderr.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, TypeVar

import click
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from src.experiments import (
    cmd_corr_report,
    cmd_dump_features,
    cmd_eval,
    cmd_lambda_sweep,
    cmd_train,
    experiment_for_checkpoint,
    load_experiment_config,
)
from src.utils.config import config
from src.utils.errors import exit_code_for
from src.utils.logger import log_error, logger, setup_logger

T = TypeVar("T")

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


@dataclass
class GlobalOptions:
    config_path: Optional[str]
    data_dir: Optional[str]
    out: Optional[str]
    seed: Optional[int]
    precision: Optional[str]
    repeats: Optional[int]

    def overrides(self) -> Dict[str, object]:
        return {
            "dataset.data_dir": self.data_dir,
            "output_dir": self.out,
            "train.seed": self.seed,
            "train.precision": self.precision,
            "repeats": self.repeats,
        }


def _run(ctx: click.Context, command: str, action: Callable[[], T]) -> T:
    """Run a command body, mapping failures to exit codes."""
    try:
        return action()
    except Exception as e:
        code = exit_code_for(e)
        log_error(command, type(e).__name__, str(e), code)
        Console(stderr=True).print(f"[bold red]{type(e).__name__}[/bold red]: {escape(str(e))}")
        ctx.exit(code)


def _split_list(value: Optional[str], cast: Callable[[str], T], option: str) -> Optional[List[T]]:
    if value is None:
        return None
    try:
        return [cast(part.strip()) for part in value.split(",") if part.strip()]
    except ValueError:
        raise click.BadParameter(f"expected a comma-separated list, got {value!r}", param_hint=option)


def _fmt(value: float) -> str:
    return f"{value:.4f}"


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Experiment JSON file")
@click.option("--data-dir", default=None, help="Dataset root (default: DECORR_DATA_DIR)")
@click.option("--out", default=None, help="Output directory")
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Training seed")
@click.option("--precision", type=click.Choice(["f64", "f32"]), default=None, help="Floating-point precision")
@click.option("--repeats", type=click.IntRange(min=1), default=None, help="Independent seeded runs")
@click.option("--log-level", type=click.Choice(LOG_LEVELS, case_sensitive=False), default=None,
              help="Log level (default: DECORR_LOG_LEVEL)")
@click.version_option(config.app.version, prog_name=config.app.name)
@click.pass_context
def cli(ctx, config_path, data_dir, out, seed, precision, repeats, log_level):
    """Multi-stage feature decorrelation experiments."""
    if log_level:
        setup_logger("decorr", log_level, config.app.log_json)
    ctx.obj = GlobalOptions(config_path, data_dir, out, seed, precision, repeats)


@cli.command()
@click.pass_context
def train(ctx):
    """Train a model (or several seeded repeats) and write metrics and checkpoints."""
    options: GlobalOptions = ctx.obj

    def _action():
        experiment = load_experiment_config(options.config_path, options.overrides())
        return cmd_train(experiment)

    outcomes = _run(ctx, "train", _action)
    table = Table(title="Final test metrics")
    table.add_column("run")
    table.add_column("accuracy", justify="right")
    table.add_column("mean |corr| per stage")
    for outcome in outcomes:
        corr = ", ".join(
            f"{key.rsplit('_', 1)[-1]}:{_fmt(value)}"
            for key, value in outcome.final_test.items() if key.startswith("meanabscorr_stage_")
        )
        table.add_row(str(outcome.output_dir), _fmt(outcome.final_test.get("accuracy", float("nan"))), corr)
    Console().print(table)


@cli.command(name="eval")
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False), help="Checkpoint to evaluate")
@click.pass_context
def eval_command(ctx, checkpoint):
    """Evaluate a checkpoint on the test split and write eval.csv."""
    options: GlobalOptions = ctx.obj

    def _action():
        experiment = experiment_for_checkpoint(options.config_path, checkpoint, options.overrides())
        return cmd_eval(experiment, checkpoint)

    record = _run(ctx, "eval", _action)
    table = Table(title=f"Evaluation of {checkpoint}")
    for column in ("accuracy", "softmax_loss", "total_loss"):
        table.add_column(column, justify="right")
    table.add_row(_fmt(record.accuracy), _fmt(record.softmax_loss), _fmt(record.total_loss))
    Console().print(table)


@cli.command(name="lambda-sweep")
@click.option("--lambdas", required=True, help="Comma-separated lambda values, e.g. 0.1,1,10")
@click.option("--include-baseline", is_flag=True, help="Add lambda = 0 to the sweep")
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True,
              help="Parallel training processes")
@click.pass_context
def lambda_sweep(ctx, lambdas, include_baseline, workers):
    """Train one run per lambda with identical seeds and data order."""
    options: GlobalOptions = ctx.obj
    values = _split_list(lambdas, float, "--lambdas")

    def _action():
        experiment = load_experiment_config(options.config_path, options.overrides())
        return cmd_lambda_sweep(experiment, values, include_baseline=include_baseline, workers=workers)

    frame = _run(ctx, "lambda-sweep", _action)
    table = Table(title="Lambda sweep")
    columns = ["lambda", "accuracy_mean", "accuracy_std"] + [
        c for c in frame.columns if c.startswith("meanabscorr_stage_") and c.endswith("_mean")
    ]
    for column in columns:
        table.add_column(column, justify="right")
    for _, row in frame.iterrows():
        table.add_row(*(f"{row['lambda']:g}" if c == "lambda" else _fmt(row[c]) for c in columns))
    Console().print(table)


@cli.command(name="corr-report")
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False), help="Trained checkpoint")
@click.option("--stages", default=None, help="Comma-separated stage indices (default: all taps)")
@click.option("--split", type=click.Choice(["train", "test"]), default="test", show_default=True)
@click.pass_context
def corr_report(ctx, checkpoint, stages, split):
    """Per-stage mean |corr| and zero-variance channel counts of a checkpoint."""
    options: GlobalOptions = ctx.obj
    chosen = _split_list(stages, int, "--stages")

    def _action():
        experiment = experiment_for_checkpoint(options.config_path, checkpoint, options.overrides())
        return cmd_corr_report(experiment, checkpoint, chosen, split)

    frame = _run(ctx, "corr-report", _action)
    table = Table(title=f"Correlation report ({split})")
    for column in ("stage", "channels", "mean_abs_corr", "mfd_loss", "zero_variance_channels"):
        table.add_column(column, justify="right")
    for _, row in frame.iterrows():
        table.add_row(
            str(row["stage"]), str(row["channels"]), _fmt(row["mean_abs_corr"]),
            _fmt(row["mfd_loss"]), str(row["zero_variance_channels"]),
        )
    Console().print(table)


@cli.command(name="dump-features")
@click.option("--checkpoint", required=True, type=click.Path(dir_okay=False), help="Trained checkpoint")
@click.option("--stage", required=True, type=click.IntRange(min=0), help="Stage index to dump")
@click.option("--samples", type=click.IntRange(min=1), default=4, show_default=True, help="Test samples to dump")
@click.option("--pgm/--no-pgm", default=True, show_default=True, help="Also write grayscale PGM images")
@click.option("--max-channels", type=click.IntRange(min=1), default=None, help="Limit PGM export to the first channels")
@click.pass_context
def dump_features(ctx, checkpoint, stage, samples, pgm, max_channels):
    """Write tapped activations of a few test images to a feature-map dump."""
    options: GlobalOptions = ctx.obj

    def _action():
        experiment = experiment_for_checkpoint(options.config_path, checkpoint, options.overrides())
        return cmd_dump_features(experiment, checkpoint, stage, samples, pgm, max_channels)

    outcome = _run(ctx, "dump-features", _action)
    click.echo(str(outcome.path))
    if outcome.pgm_files:
        click.echo(f"{len(outcome.pgm_files)} PGM files in {outcome.pgm_files[0].parent}")


def main():
    logger.debug("CLI invoked")
    cli(prog_name="decorr")


if __name__ == "__main__":
    main()
