"""
SGD with momentum and coupled L2 weight decay, plus the step LR schedule.
"""

from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from src.models.spec_schema import TrainConfig
from src.nn.network import StagedNetwork
from src.utils.errors import TapeError


@dataclass
class OptimizerState:
    """Velocity buffer per parameter name and the number of steps taken."""
    velocities: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_model(cls, model: StagedNetwork) -> "OptimizerState":
        return cls({name: np.zeros_like(t.data) for name, t, _ in model.named_parameters()})


def sgd_step(
    model: StagedNetwork,
    grads: Optional[Mapping[str, np.ndarray]],
    state: OptimizerState,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> None:
    """
    One in-place update of every parameter.

    v <- momentum * v + (grad + weight_decay * param)
    param <- param - lr * v

    Weight decay only touches parameters flagged for it (conv and linear
    weights).

    Args:
        model: Network whose parameters are updated
        grads: Gradient per parameter name; None reads each tensor's ``grad``
        state: Velocity buffers, updated in place
        lr: Learning rate for this step
        momentum: Momentum coefficient
        weight_decay: L2 coefficient
    """
    for name, tensor, decays in model.named_parameters():
        grad = tensor.grad if grads is None else grads.get(name)
        if grad is None:
            raise TapeError(f"missing gradient for parameter {name}")
        update = grad + weight_decay * tensor.data if decays and weight_decay else grad
        velocity = state.velocities.get(name)
        if velocity is None:
            velocity = np.zeros_like(tensor.data)
        velocity = momentum * velocity + update
        state.velocities[name] = velocity
        tensor.data -= lr * velocity
    state.step += 1


def lr_at(epoch: int, config: TrainConfig) -> float:
    """lr_initial * lr_drop_factor ** (number of drop epochs <= epoch); 0-based epochs."""
    drops = bisect_right(config.lr_drop_epochs, epoch)
    return config.lr_initial * config.lr_drop_factor ** drops
