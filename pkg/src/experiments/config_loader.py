"""
ExperimentConfig resolution: JSON file, then CLI overrides, then
environment defaults. The resolved configuration is written next to the
run's artifacts and reproduces the run when fed back through --config.
"""

import json
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from pydantic import ValidationError

from src.models.spec_schema import ExperimentConfig
from src.utils.artifacts import atomic_write_text
from src.utils.config import config
from src.utils.errors import ConfigError

RESOLVED_CONFIG_NAME = "config.resolved.json"

PathLike = Union[str, Path]


def describe_validation_error(error: ValidationError) -> str:
    """One line per problem, naming the offending key path."""
    lines = []
    for problem in error.errors():
        location = ".".join(str(part) for part in problem.get("loc", ())) or "<root>"
        if problem.get("type") == "extra_forbidden":
            lines.append(f"unknown key '{location}'")
        else:
            lines.append(f"{location}: {problem.get('msg')}")
    return "; ".join(lines)


def _set_path(tree: Dict[str, Any], dotted: str, value: Any) -> None:
    node = tree
    *parents, leaf = dotted.split(".")
    for part in parents:
        child = node.get(part)
        if not isinstance(child, dict):
            child = {}
            node[part] = child
        node = child
    node[leaf] = value


def validate_experiment(raw: Mapping[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(dict(raw))
    except ValidationError as e:
        raise ConfigError(f"invalid experiment config: {describe_validation_error(e)}") from e


def load_experiment_config(
    path: Optional[PathLike] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> ExperimentConfig:
    """
    Build an ExperimentConfig from an optional JSON file plus overrides.

    Args:
        path: JSON experiment file; defaults apply when None
        overrides: Dotted keys (e.g. "train.seed") set after reading the
            file; None values are skipped

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigError: unreadable file, invalid JSON, unknown keys or
            invalid values
    """
    raw: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")

    for key, value in (overrides or {}).items():
        if value is not None:
            _set_path(raw, key, value)

    raw.setdefault("output_dir", config.app.output_dir)
    train = raw.setdefault("train", {})
    if isinstance(train, dict):
        train.setdefault("precision", config.app.precision)
    return validate_experiment(raw)


def resolved_json(experiment: ExperimentConfig) -> str:
    payload = experiment.model_dump(mode="json", by_alias=True)
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def write_resolved_config(out_dir: PathLike, experiment: ExperimentConfig) -> Path:
    return atomic_write_text(Path(out_dir) / RESOLVED_CONFIG_NAME, resolved_json(experiment))


def with_updates(experiment: ExperimentConfig, **updates: Any) -> ExperimentConfig:
    """Copy with dotted-key updates, re-validated."""
    raw = experiment.model_dump(mode="json", by_alias=True)
    for key, value in updates.items():
        _set_path(raw, key.replace("__", "."), value)
    return validate_experiment(raw)
