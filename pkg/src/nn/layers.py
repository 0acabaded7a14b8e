"""
Layer modules wrapping the autodiff operations.

Each module owns its parameters as gradient-tracking leaf Tensors and
reports them through ``named_parameters`` together with a flag telling
the optimizer whether weight decay applies.
"""

from typing import Dict, List, Optional, Tuple

import numpy as np

from src.autodiff.functional import batch_norm2d, conv2d, linear, max_pool2d, relu
from src.autodiff.tensor import Tensor

# (local name, tensor, weight decay applies)
NamedParameter = Tuple[str, Tensor, bool]


def kaiming_uniform(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """He/Kaiming uniform initialization for ReLU networks (fan-in mode)."""
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Base class: a callable layer with optional parameters and buffers."""

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return self.forward(x, training)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        raise NotImplementedError

    def named_parameters(self) -> List[NamedParameter]:
        return []

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int,
        padding: int,
        bias: bool,
        rng: np.random.Generator,
    ):
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        self.weight = Tensor(
            kaiming_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def named_parameters(self) -> List[NamedParameter]:
        params = [("weight", self.weight, True)]
        if self.bias is not None:
            params.append(("bias", self.bias, False))
        return params


class BatchNorm2d(Module):
    def __init__(self, channels: int):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=self.gamma.data.dtype)
        self.running_var = np.ones(channels, dtype=self.gamma.data.dtype)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return batch_norm2d(x, self.gamma, self.beta, self.running_mean, self.running_var, training)

    def named_parameters(self) -> List[NamedParameter]:
        return [("gamma", self.gamma, False), ("beta", self.beta, False)]

    def buffers(self) -> Dict[str, np.ndarray]:
        return {"running_mean": self.running_mean, "running_var": self.running_var}


class ReLU(Module):
    def forward(self, x: Tensor, training: bool) -> Tensor:
        return relu(x)


class MaxPool2d(Module):
    def __init__(self, kernel: int = 2, stride: Optional[int] = None):
        self.kernel = kernel
        self.stride = stride or kernel

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return max_pool2d(x, self.kernel, self.stride)


class Linear(Module):
    """Fully connected layer; weight is stored [in_features, out_features]."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = Tensor(
            kaiming_uniform(rng, (in_features, out_features), in_features),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return linear(x, self.weight, self.bias)

    def named_parameters(self) -> List[NamedParameter]:
        return [("weight", self.weight, True), ("bias", self.bias, False)]
