"""
Staged convolutional network built from a ModelSpec.

Stages run in order; the output of a stage's tap block is captured as
StageActivations when that stage is requested. The captured Tensor is the
very object the next block consumes, so tapping never alters the forward
path. After the last stage, global average pooling feeds the classifier.
"""

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple, Union

import numpy as np

from src.autodiff.functional import mean_over_axes, output_shape_conv, output_shape_pool
from src.autodiff.tensor import Tensor
from src.decorrelation.correlation import StageActivations
from src.models.spec_schema import BlockKind, ModelSpec
from src.nn.layers import BatchNorm2d, Conv2d, Linear, MaxPool2d, Module, ReLU
from src.utils.errors import ConfigError, FormatError, ShapeError
from src.utils.logger import get_logger

log = get_logger("nn.network")

MODES = ("train", "eval")


@dataclass
class ForwardResult:
    logits: Tensor
    taps: List[StageActivations] = field(default_factory=list)

    def tap(self, stage_id: int) -> StageActivations:
        for acts in self.taps:
            if acts.stage_id == stage_id:
                return acts
        raise KeyError(stage_id)


class StagedNetwork:
    """A built model: stage modules, classifier and their parameters."""

    def __init__(
        self,
        spec: ModelSpec,
        stages: List[List[Module]],
        hidden: Optional[Linear],
        head: Linear,
    ):
        self.spec = spec
        self.stages = stages
        self.hidden = hidden
        self.head = head

    def _modules(self) -> Iterable[Tuple[str, Module]]:
        for i, stage in enumerate(self.stages):
            for j, module in enumerate(stage):
                yield f"stage{i}.{j}", module
        if self.hidden is not None:
            yield "classifier.hidden", self.hidden
        yield "classifier.out", self.head

    def named_parameters(self) -> List[Tuple[str, Tensor, bool]]:
        """(name, tensor, weight-decay flag) in a fixed order."""
        return [
            (f"{prefix}.{name}", tensor, decay)
            for prefix, module in self._modules()
            for name, tensor, decay in module.named_parameters()
        ]

    def parameters(self) -> List[Tensor]:
        return [tensor for _, tensor, _ in self.named_parameters()]

    def parameter_count(self) -> int:
        return int(sum(tensor.size for tensor in self.parameters()))

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()

    @property
    def num_classes(self) -> int:
        return self.spec.classifier.classes

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters and batch-norm running statistics, copied."""
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for prefix, module in self._modules():
            for name, tensor, _ in module.named_parameters():
                state[f"{prefix}.{name}"] = tensor.data.copy()
            for name, buffer in module.buffers().items():
                state[f"{prefix}.{name}"] = buffer.copy()
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = set(expected) - set(state)
        unexpected = set(state) - set(expected)
        if missing or unexpected:
            raise FormatError(
                f"state mismatch: missing {sorted(missing)}, unexpected {sorted(unexpected)}"
            )
        for prefix, module in self._modules():
            for name, tensor, _ in module.named_parameters():
                tensor.data[...] = _checked(state, f"{prefix}.{name}", tensor.shape)
            for name, buffer in module.buffers().items():
                buffer[...] = _checked(state, f"{prefix}.{name}", buffer.shape)

    def __call__(self, x, tap_stages: Iterable[int] = (), mode: str = "train") -> ForwardResult:
        return forward(self, x, tap_stages, mode)


def _checked(state: Dict[str, np.ndarray], key: str, shape: Tuple[int, ...]) -> np.ndarray:
    value = np.asarray(state[key])
    if value.shape != shape:
        raise FormatError(f"{key}: stored shape {value.shape} != model shape {shape}")
    return value


def build_model(spec: ModelSpec, seed: int) -> StagedNetwork:
    """
    Instantiate the layers described by ``spec``.

    Parameters are drawn in declaration order from one generator seeded
    with ``seed``, so the same spec and seed give bit-identical weights.

    Raises:
        ConfigError: when a stage would collapse the spatial extent
    """
    rng = np.random.default_rng(seed)
    shape = tuple(spec.input_shape)
    stages: List[List[Module]] = []

    for index, stage_spec in enumerate(spec.stages):
        modules: List[Module] = []
        for blk in stage_spec.blocks:
            channels, height, width = shape
            if blk.kind == BlockKind.CONV:
                if blk.kernel > height + 2 * blk.padding or blk.kernel > width + 2 * blk.padding:
                    raise ConfigError(
                        f"stage {index}: {blk.kernel}x{blk.kernel} conv does not fit a {height}x{width} input"
                    )
                modules.append(
                    Conv2d(channels, blk.out_channels, blk.kernel, blk.stride, blk.padding, blk.bias, rng)
                )
                shape = output_shape_conv(shape, blk.out_channels, blk.kernel, blk.stride, blk.padding)
            elif blk.kind == BlockKind.BATCHNORM:
                modules.append(BatchNorm2d(channels))
            elif blk.kind == BlockKind.RELU:
                modules.append(ReLU())
            elif blk.kind == BlockKind.MAXPOOL:
                if blk.kernel > height or blk.kernel > width:
                    raise ConfigError(
                        f"stage {index}: {blk.kernel}x{blk.kernel} pool does not fit a {height}x{width} input"
                    )
                modules.append(MaxPool2d(blk.kernel, blk.stride))
                shape = output_shape_pool(shape, blk.kernel, blk.stride)
            if shape[1] < 1 or shape[2] < 1:
                raise ConfigError(f"stage {index} would output {shape[1]}x{shape[2]}")
        stages.append(modules)

    features = shape[0]
    hidden = None
    if spec.classifier.hidden:
        hidden = Linear(features, spec.classifier.hidden, rng)
        features = spec.classifier.hidden
    head = Linear(features, spec.classifier.classes, rng)

    model = StagedNetwork(spec, stages, hidden, head)
    log.debug(
        f"Built model {spec.name}",
        extra={"stages": len(stages), "parameter_count": model.parameter_count()},
    )
    return model


def forward(
    model: StagedNetwork,
    input: Union[Tensor, np.ndarray],
    tap_stages: Iterable[int] = (),
    mode: str = "train",
) -> ForwardResult:
    """
    Run the network, capturing activations at the requested stages.

    Args:
        model: Built network
        input: Batch of shape [b, c, h, w] matching ModelSpec.input_shape
        tap_stages: Stage indices to capture (subset of the declared taps)
        mode: "train" (batch statistics) or "eval" (running statistics)

    Returns:
        ForwardResult with logits and taps in ascending stage order
    """
    if mode not in MODES:
        raise ConfigError(f"Unknown mode: {mode}")
    x = input if isinstance(input, Tensor) else Tensor(input)
    expected = tuple(model.spec.input_shape)
    if x.ndim != 4 or tuple(x.shape[1:]) != expected:
        raise ShapeError(f"input shape {x.shape} does not match [b, {', '.join(map(str, expected))}]")

    wanted = set(tap_stages)
    unknown = wanted - set(model.spec.declared_taps)
    if unknown:
        raise ConfigError(f"unknown stage index {sorted(unknown)}; declared taps {model.spec.declared_taps}")

    training = mode == "train"
    taps: List[StageActivations] = []
    for index, (stage_spec, modules) in enumerate(zip(model.spec.stages, model.stages)):
        for position, module in enumerate(modules):
            x = module(x, training)
            if index in wanted and position == stage_spec.tap_index:
                taps.append(StageActivations(tensor=x, stage_id=index))

    features = mean_over_axes(x, (2, 3))
    if model.hidden is not None:
        features = ReLU()(model.hidden(features, training), training)
    logits = model.head(features, training)
    return ForwardResult(logits=logits, taps=taps)
