"""
N-dimensional tensor with reverse-mode automatic differentiation.

Every differentiable operation produces a Node holding its inputs and a
backward rule. ``backward(loss)`` orders the nodes reachable from the loss
into a ComputationTape (inputs before consumers) and walks it in reverse,
accumulating gradients into leaves that track them.

Values are float64 by default; ``set_precision("f32")`` switches the
global dtype for speed. Any forward result containing NaN/Inf raises
NumericError immediately.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.errors import NumericError, ShapeError, TapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_PRECISIONS = {"f64": np.float64, "f32": np.float32}
_dtype = np.float64
_grad_state = threading.local()


def set_precision(precision: str) -> None:
    """Select the global value dtype ("f64" or "f32")."""
    global _dtype
    if precision not in _PRECISIONS:
        raise ValueError(f"Unknown precision: {precision}")
    _dtype = _PRECISIONS[precision]


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording on the current thread."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


@dataclass(eq=False)
class Node:
    """One recorded operation: its inputs and the rule mapping dOut to dInputs."""
    op: str
    inputs: Tuple["Tensor", ...]
    backward_fn: Optional[BackwardFn]
    consumed: bool = False


class Tensor:
    """
    Numeric array with optional gradient tracking.

    Leaves created with ``requires_grad=True`` start with a zero gradient
    buffer; non-leaf tensors carry the Node that produced them.
    """

    __array_priority__ = 100

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _node: Optional[Node] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        self.data: np.ndarray = np.ascontiguousarray(data, dtype=_dtype)
        self.requires_grad = requires_grad
        self._node = _node
        self.grad: Optional[np.ndarray] = (
            np.zeros_like(self.data) if requires_grad and _node is None else None
        )

    # ── introspection ────────────────────────────────────────────────────

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self, retain_graph: bool = False) -> None:
        backward(self, retain_graph=retain_graph)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # ── operators ────────────────────────────────────────────────────────

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def sum(self, axes: Optional[Tuple[int, ...]] = None) -> "Tensor":
        return tensor_sum(self, axes)

    def reshape(self, *shape: int) -> "Tensor":
        return reshape(self, shape)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def record_op(
    op: str,
    out: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: BackwardFn,
) -> Tensor:
    """
    Wrap a forward result, checking finiteness and recording a Node when
    any input tracks gradients and recording is enabled.
    """
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{op} produced non-finite values", op=op)
    tracked = is_grad_enabled() and any(t.requires_grad for t in inputs)
    if not tracked:
        return Tensor(out)
    node = Node(op=op, inputs=tuple(inputs), backward_fn=backward_fn)
    return Tensor(out, requires_grad=True, _node=node)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` over axes numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _elementwise_operands(op: str, a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    return a, b


# ── elementwise arithmetic ──────────────────────────────────────────────────


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _elementwise_operands("add", a, b)

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return record_op("add", a.data + b.data, (a, b), _backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _elementwise_operands("sub", a, b)

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return record_op("sub", a.data - b.data, (a, b), _backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _elementwise_operands("mul", a, b)

    def _backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return record_op("mul", a.data * b.data, (a, b), _backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _elementwise_operands("div", a, b)
    if np.any(b.data == 0):
        raise NumericError("div: division by exact zero", op="div")

    def _backward(g):
        return (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return record_op("div", a.data / b.data, (a, b), _backward)


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return record_op("neg", -a.data, (a,), lambda g: (-g,))


def power(a: ArrayLike, exponent: float) -> Tensor:
    a = as_tensor(a)

    def _backward(g):
        return (g * exponent * np.power(a.data, exponent - 1),)

    return record_op("pow", np.power(a.data, exponent), (a,), _backward)


# ── linear algebra and shape ────────────────────────────────────────────────


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ {a.shape} @ {b.shape}")

    def _backward(g):
        return g @ b.data.T, a.data.T @ g

    return record_op("matmul", a.data @ b.data, (a, b), _backward)


def tensor_sum(a: Tensor, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    out = a.data.sum(axis=axes)

    def _backward(g):
        if axes is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axes), a.shape).copy(),)

    return record_op("sum", np.asarray(out), (a,), _backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    return record_op(
        "reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),)
    )


def broadcast_to(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Explicit broadcast; backward sums over the expanded axes."""
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as e:
        raise ShapeError(f"cannot broadcast {a.shape} to {shape}") from e
    return record_op("broadcast_to", out, (a,), lambda g: (unbroadcast(g, a.shape),))


# ── tape ────────────────────────────────────────────────────────────────────


@dataclass
class ComputationTape:
    """Recorded operations reachable from a loss, producers before consumers."""
    nodes: List[Node] = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss: Tensor) -> "ComputationTape":
        order: List[Node] = []
        if loss._node is None:
            return cls(order)
        visited = set()
        stack = [(loss._node, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in visited:
                continue
            if expanded:
                visited.add(id(node))
                order.append(node)
                continue
            stack.append((node, True))
            for t in node.inputs:
                if t._node is not None and id(t._node) not in visited:
                    stack.append((t._node, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=t.data.dtype).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """
    Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Without ``retain_graph`` the tape is consumed and a second call raises
    TapeError. Gradients accumulate, so callers zero them between steps.
    """
    if loss.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("loss was not produced on an active tape")

    seed = np.ones_like(loss.data)
    if loss.is_leaf:
        _accumulate_leaf(loss, seed)
        return

    tape = ComputationTape.from_loss(loss)
    if any(node.consumed for node in tape.nodes):
        raise TapeError("backward called on a consumed tape")

    pending: Dict[int, np.ndarray] = {id(loss._node): seed}
    for node in reversed(tape.nodes):
        upstream = pending.pop(id(node), None)
        if upstream is None:
            continue
        input_grads = node.backward_fn(upstream)
        for t, g in zip(node.inputs, input_grads):
            if g is None or not t.requires_grad:
                continue
            if t._node is None:
                _accumulate_leaf(t, g)
            else:
                key = id(t._node)
                pending[key] = pending[key] + g if key in pending else g

    if not retain_graph:
        for node in tape.nodes:
            node.consumed = True
            node.backward_fn = None
