"""Dense float64 tensors with a dynamic reverse-mode differentiation tape.

Every operation allocates a fresh output tensor and, while gradient recording
is enabled, a backward closure. The tape is implicit: tensors carry a
monotonically increasing ``node_id`` assigned at creation, so reverse
insertion order (which is a valid topological order by construction) is
recovered by sorting. Graphs are confined to the thread that built them.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_EPS = 1e-12

_state = threading.local()


def _next_node_id() -> int:
    counter = getattr(_state, "counter", None)
    if counter is None:
        counter = itertools.count()
        _state.counter = counter
    return next(counter)


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager that disables graph recording (pure inference)."""

    def __enter__(self) -> "no_grad":
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc) -> None:
        _state.grad_enabled = self._prev


class ShapeMismatchError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class GraphError(RuntimeError):
    """The differentiation graph was used incorrectly (e.g. non-scalar loss)."""


class MissingGradientError(RuntimeError):
    """A parameter update was requested before its gradient was populated."""


class Tensor:
    """N-dimensional float64 array, optionally tracked on the active tape.

    ``grad`` stays ``None`` until a backward pass deposits a value; repeated
    backward passes accumulate into it until it is cleared.
    """

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self.node_id = _next_node_id()
        self.op = "leaf"
        self.saturated = False
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(op={self.op},{tag} shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions are the real surface.
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else scalar_add(self, other)

    def __radd__(self, other):
        return scalar_add(self, other)

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else scalar_add(self, -other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scalar_mul(self, other)

    def __rmul__(self, other):
        return scalar_mul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor],
          backward: Callable[[np.ndarray], tuple] | None) -> Tensor:
    track = grad_enabled() and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track)
    out.op = op
    if track:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(
            f"{op}: operand shapes {a.data.shape} and {b.data.shape} differ")


# ---------------------------------------------------------------------------
# elementwise operations
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)
    data = a.data + b.data
    return _make(data, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    data = a.data - b.data
    return _make(data, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    data = a.data * b.data
    return _make(data, "mul", (a, b), lambda g: (g * b.data, g * a.data))


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("div", a, b)
    data = a.data / b.data
    return _make(data, "div", (a, b),
                 lambda g: (g / b.data, -g * a.data / (b.data * b.data)))


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, "scalar_mul", (a,), lambda g: (g * c,))


def scalar_add(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data + c, "scalar_add", (a,), lambda g: (g,))


def relu(a: Tensor) -> Tensor:
    # relu'(0) = 0: the mask is strict, keeping golden runs deterministic.
    mask = a.data > 0.0
    data = np.where(mask, a.data, 0.0)
    return _make(data, "relu", (a,), lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    data = np.exp(a.data)
    return _make(data, "exp", (a,), lambda g: (g * data,))


def log(a: Tensor) -> Tensor:
    """Natural log; inputs below LOG_EPS are clamped there (flat gradient).

    Clamping marks ``saturated`` on the output so callers can surface the
    event as a flag.
    """
    clamped = np.maximum(a.data, LOG_EPS)
    live = a.data >= LOG_EPS
    out = _make(np.log(clamped), "log", (a,), lambda g: (g * live / clamped,))
    out.saturated = bool(not live.all())
    return out


def scale(a: Tensor, s: Tensor) -> Tensor:
    """Multiply a tensor by a scalar tensor (both sides differentiable)."""
    if s.data.shape != ():
        raise ShapeMismatchError(f"scale: multiplier must be scalar, got shape {s.data.shape}")
    data = a.data * s.data
    return _make(data, "scale", (a, s),
                 lambda g: (g * s.data, np.asarray(np.sum(g * a.data))))


def div_scalar(a: Tensor, s: Tensor) -> Tensor:
    """Divide a tensor by a scalar tensor (both sides differentiable)."""
    if s.data.shape != ():
        raise ShapeMismatchError(f"div_scalar: divisor must be scalar, got shape {s.data.shape}")
    data = a.data / s.data
    return _make(data, "div_scalar", (a, s),
                 lambda g: (g / s.data, np.asarray(-np.sum(g * a.data) / (s.data * s.data))))


def elementwise(kind: str, *args) -> Tensor:
    """Dispatch by kind name: relu, log, exp, add, sub, mul, scalar_mul."""
    table = {"relu": relu, "log": log, "exp": exp,
             "add": add, "sub": sub, "mul": mul, "scalar_mul": scalar_mul}
    if kind not in table:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    return table[kind](*args)


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def tsum(a: Tensor) -> Tensor:
    data = np.asarray(np.sum(a.data))
    return _make(data, "sum", (a,), lambda g: (np.broadcast_to(g, a.data.shape).copy(),))


def mean(a: Tensor) -> Tensor:
    if a.size == 0:
        raise ShapeMismatchError("mean: empty input")
    n = a.size
    data = np.asarray(np.mean(a.data))
    return _make(data, "mean", (a,),
                 lambda g: (np.broadcast_to(g / n, a.data.shape).copy(),))


def tmax(a: Tensor) -> Tensor:
    """Global max; the gradient routes to the first maximal element in scan order."""
    if a.size == 0:
        raise ShapeMismatchError("max: empty input")
    flat_idx = int(np.argmax(a.data))
    data = np.asarray(a.data.reshape(-1)[flat_idx])

    def backward(g):
        out = np.zeros_like(a.data)
        out.reshape(-1)[flat_idx] = g
        return (out,)

    return _make(data, "max", (a,), backward)


def norm2(a: Tensor) -> Tensor:
    """Euclidean norm over all elements.

    At an exactly-zero input the true derivative does not exist; the zero
    subgradient is used so that zero-distance pairs are exact fixed points.
    """
    value = float(np.sqrt(np.sum(a.data * a.data)))
    data = np.asarray(value)

    def backward(g):
        if value == 0.0:
            return (np.zeros_like(a.data),)
        return (g * a.data / value,)

    return _make(data, "norm2", (a,), backward)


def global_avg_pool(a: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, C] spatial mean."""
    if a.data.ndim != 4:
        raise ShapeMismatchError(f"global_avg_pool: expected 4-d input, got shape {a.data.shape}")
    n_spatial = a.data.shape[2] * a.data.shape[3]
    data = a.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / n_spatial, a.data.shape).copy(),)

    return _make(data, "global_avg_pool", (a,), backward)


def max_pool2x2(a: Tensor) -> Tensor:
    """2x2/stride-2 max pooling; odd trailing rows/columns are dropped.

    Within each window the gradient goes to the first maximal element in
    row-major scan order.
    """
    if a.data.ndim != 4:
        raise ShapeMismatchError(f"max_pool2x2: expected 4-d input, got shape {a.data.shape}")
    n, c, h, w = a.data.shape
    ho, wo = h // 2, w // 2
    if ho == 0 or wo == 0:
        raise ShapeMismatchError(f"max_pool2x2: spatial extent too small in shape {a.data.shape}")
    windows = a.data[:, :, : 2 * ho, : 2 * wo].reshape(n, c, ho, 2, wo, 2)
    windows = windows.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    picks = np.argmax(windows, axis=-1)  # first max in scan order
    data = np.take_along_axis(windows, picks[..., None], axis=-1)[..., 0]

    def backward(g):
        flat = np.zeros((n, c, ho, wo, 4), dtype=np.float64)
        np.put_along_axis(flat, picks[..., None], g[..., None], axis=-1)
        scattered = flat.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        result = np.zeros_like(a.data)
        result[:, :, : 2 * ho, : 2 * wo] = scattered.reshape(n, c, 2 * ho, 2 * wo)
        return (result,)

    return _make(data, "max_pool2x2", (a,), backward)


def reduce(kind: str, a: Tensor) -> Tensor:
    """Dispatch by kind name: mean, sum, max, global_avg_pool, max_pool2x2."""
    table = {"mean": mean, "sum": tsum, "max": tmax,
             "global_avg_pool": global_avg_pool, "max_pool2x2": max_pool2x2}
    if kind not in table:
        raise ValueError(f"unknown reduce kind {kind!r}")
    return table[kind](a)


# ---------------------------------------------------------------------------
# indexing
# ---------------------------------------------------------------------------

def index(a: Tensor, idx: int) -> Tensor:
    """Extract one element of a 1-d tensor as a scalar."""
    if a.data.ndim != 1:
        raise ShapeMismatchError(f"index: expected 1-d input, got shape {a.data.shape}")
    idx = int(idx)
    data = np.asarray(a.data[idx])

    def backward(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)

    return _make(data, "index", (a,), backward)


def take_row(a: Tensor, i: int) -> Tensor:
    """Select index ``i`` along the leading axis."""
    i = int(i)
    data = a.data[i].copy()

    def backward(g):
        out = np.zeros_like(a.data)
        out[i] = g
        return (out,)

    return _make(data, "take_row", (a,), backward)


# ---------------------------------------------------------------------------
# backward pass and parameter updates
# ---------------------------------------------------------------------------

@dataclass
class GraphNode:
    node_id: int
    op: str
    parent_ids: tuple[int, ...]
    shape: tuple[int, ...]


@dataclass
class Graph:
    """Ordered view of the tape reachable from one root, for introspection."""

    nodes: list[GraphNode]


def _ancestry(root: Tensor) -> list[Tensor]:
    """Tensors contributing gradient to ``root``, sorted by insertion order."""
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen[id(t)] = t
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append(p)
    return sorted(seen.values(), key=lambda t: t.node_id)


def trace(root: Tensor) -> Graph:
    nodes = [GraphNode(t.node_id, t.op, tuple(p.node_id for p in t._parents), t.shape)
             for t in _ancestry(root)]
    return Graph(nodes)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad tensor reachable from ``loss``.

    Visits the tape in exact reverse insertion order. Gradients accumulate
    across calls; clear them (``zero_grad``) between independent passes.
    """
    if loss.data.shape != ():
        raise GraphError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise GraphError("backward: loss does not require grad (nothing to differentiate)")

    order = _ancestry(loss)
    flowing: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for t in reversed(order):
        g = flowing.pop(id(t), None)
        if g is None:
            continue
        if t.grad is None:
            t.grad = np.array(g, dtype=np.float64)
        else:
            t.grad = t.grad + g
        if t._backward is None:
            continue
        for parent, pg in zip(t._parents, t._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in flowing:
                flowing[key] = flowing[key] + pg
            else:
                flowing[key] = np.asarray(pg, dtype=np.float64)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def sgd_step(params: Sequence[Tensor], lr: float) -> None:
    """p <- p - lr * grad(p) for every parameter, then clear the gradients."""
    for p in params:
        if p.grad is None:
            label = p.name if p.name is not None else f"node {p.node_id}"
            raise MissingGradientError(f"sgd_step: parameter {label} has no gradient")
    for p in params:
        p.data = p.data - lr * p.grad
        p.grad = None
