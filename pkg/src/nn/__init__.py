"""Neural network package initialization"""

from src.nn.layers import Module, Conv2d, BatchNorm2d, ReLU, MaxPool2d, Linear
from src.nn.network import ForwardResult, StagedNetwork, build_model, forward
from src.nn.catalog import builtin_specs, lookup, staged_spec

__all__ = [
    "Module",
    "Conv2d",
    "BatchNorm2d",
    "ReLU",
    "MaxPool2d",
    "Linear",
    "ForwardResult",
    "StagedNetwork",
    "build_model",
    "forward",
    "builtin_specs",
    "lookup",
    "staged_spec",
]
