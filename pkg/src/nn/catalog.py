"""
Built-in desk-scale model catalog.

Every stage is conv3x3-BN-ReLU; stage 0 keeps stride 1 (no stem
downsampling) and later stages halve the resolution with a stride-2 conv.
"""

from typing import Callable, Dict, List, Sequence, Tuple

from src.models.spec_schema import BlockKind, BlockSpec, ClassifierSpec, ModelSpec, StageSpec
from src.utils.errors import ConfigError

DEFAULT_INPUT_SHAPE = (3, 32, 32)
DEFAULT_CLASSES = 10


def conv_bn_relu_stage(out_channels: int, stride: int, stem_pool: bool = False) -> StageSpec:
    blocks = [
        BlockSpec(kind=BlockKind.CONV, out_channels=out_channels, kernel=3, stride=stride, padding=1),
        BlockSpec(kind=BlockKind.BATCHNORM),
        BlockSpec(kind=BlockKind.RELU),
    ]
    if stem_pool:
        blocks.append(BlockSpec(kind=BlockKind.MAXPOOL, kernel=2, stride=2))
    return StageSpec(
        blocks=blocks,
        output_channels=out_channels,
        downsample=stride > 1 or stem_pool,
    )


def staged_spec(
    name: str,
    channels: Sequence[int],
    input_shape: Tuple[int, int, int],
    num_classes: int,
    hidden: int = 0,
    stem_pool: bool = False,
) -> ModelSpec:
    """Plain conv-BN-ReLU stages; stride 2 at every stage after the first."""
    stages: List[StageSpec] = [
        conv_bn_relu_stage(width, stride=1 if index == 0 else 2, stem_pool=stem_pool and index == 0)
        for index, width in enumerate(channels)
    ]
    return ModelSpec(
        name=name,
        input_shape=tuple(input_shape),
        stages=stages,
        classifier=ClassifierSpec(hidden=hidden, classes=num_classes),
    )


_CATALOG: Dict[str, Callable[[Tuple[int, int, int], int], ModelSpec]] = {
    "mini3": lambda shape, classes: staged_spec("mini3", (8, 16, 32), shape, classes),
    "mini5": lambda shape, classes: staged_spec("mini5", (8, 16, 32, 64, 64), shape, classes, hidden=64),
    "mini5_pool": lambda shape, classes: staged_spec(
        "mini5_pool", (8, 16, 32, 64, 64), shape, classes, hidden=64, stem_pool=True
    ),
}


def builtin_specs(
    input_shape: Tuple[int, int, int] = DEFAULT_INPUT_SHAPE,
    num_classes: int = DEFAULT_CLASSES,
) -> Dict[str, ModelSpec]:
    return {name: factory(tuple(input_shape), num_classes) for name, factory in _CATALOG.items()}


def lookup(
    name: str,
    input_shape: Tuple[int, int, int] = DEFAULT_INPUT_SHAPE,
    num_classes: int = DEFAULT_CLASSES,
) -> ModelSpec:
    if name not in _CATALOG:
        raise ConfigError(f"Unknown model: {name} (available: {', '.join(sorted(_CATALOG))})")
    return _CATALOG[name](tuple(input_shape), num_classes)
