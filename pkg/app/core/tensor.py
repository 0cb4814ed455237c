"""
Dense Tensors with Reverse-Mode Automatic Differentiation

Every Tensor wraps a float64 numpy array. Operations whose inputs require
gradients record a Node (inputs + local backward rule) on their output;
backward() collects the reachable nodes into a Graph and replays them in
exact reverse creation order.

Gradients accumulate into Tensor.grad; callers clear them with zero_grads()
between optimization steps. A graph belongs to the thread that built it.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from app.exceptions import MaskingError, ShapeError

# Additive fill for masked logits; -inf would produce NaN on fully masked rows.
MASK_FILL = -1e30

Axis = Union[None, int, Tuple[int, ...]]
BackwardRule = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_node_counter = itertools.count()
_grad_state = threading.local()


def is_grad_enabled() -> bool:
    """Whether operations on this thread currently record graph nodes."""
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording on the current thread (inference, finite differences)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


@dataclass(eq=False)
class Node:
    """One operation record: its inputs and the rule mapping output grad to input grads."""

    op: str
    inputs: Tuple["Tensor", ...]
    backward_rule: BackwardRule
    seq: int = field(default_factory=lambda: next(_node_counter))


class Tensor:
    """
    Dense n-dimensional float64 array participating in a differentiation graph.

    Attributes:
        data: Values (row-major numpy array, float64)
        requires_grad: Whether gradients flow into this tensor
        grad: Accumulated gradient, same shape as data, or None
        node: Operation record that produced this tensor, or None for leaves
        name: Optional label used in error messages and checkpoints
    """

    __slots__ = ("data", "requires_grad", "grad", "node", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = array
        out.requires_grad = False
        out.grad = None
        out.node = None
        out.name = None
        return out

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        """Copy of the raw values, detached from any graph."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return len(self.data)

    # ------------------------------------------------------------------
    # Operator sugar
    # ------------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def tanh(self) -> "Tensor":
        return tanh(self)

    def relu(self) -> "Tensor":
        return relu(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def sum(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes: Optional[Sequence[int]] = None) -> "Tensor":
        return transpose(self, axes)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


TensorLike = Union[Tensor, np.ndarray, float, int, Sequence]


def as_tensor(value: TensorLike) -> Tensor:
    """Wrap a raw value as a constant (no-gradient) tensor; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.asarray(value, dtype=np.float64))


def constant(value: TensorLike) -> Tensor:
    return as_tensor(value)


def apply_op(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_rule: BackwardRule) -> Tensor:
    """
    Create an operation output and, when any input requires grad, record its node.

    Args:
        op: Operation name (appears in graph records)
        data: Forward result
        inputs: Input tensors, in the order backward_rule returns their gradients
        backward_rule: Maps the output gradient to one gradient (or None) per input

    Returns:
        Output tensor
    """
    out = Tensor._wrap(np.asarray(data, dtype=np.float64))
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op=op, inputs=tuple(inputs), backward_rule=backward_rule)
    return out


# ----------------------------------------------------------------------
# Graph and backward
# ----------------------------------------------------------------------


@dataclass
class Graph:
    """Operation records reachable from a root, ordered by creation."""

    records: List[Tensor]

    @classmethod
    def collect(cls, root: Tensor) -> "Graph":
        seen = set()
        found: List[Tensor] = []
        stack = [root]
        while stack:
            tensor = stack.pop()
            if id(tensor) in seen or tensor.node is None:
                continue
            seen.add(id(tensor))
            found.append(tensor)
            stack.extend(t for t in tensor.node.inputs if t.requires_grad)
        found.sort(key=lambda t: t.node.seq)
        return cls(records=found)

    def free(self) -> None:
        """Drop operation records so intermediate buffers can be released."""
        for tensor in self.records:
            tensor.node = None
        self.records = []


def backward(loss: Tensor, retain_graph: bool = False) -> None:
    """
    Populate .grad of every tensor reachable from loss that requires grad.

    Gradients accumulate; call zero_grads() between steps. The graph is
    freed afterwards unless retain_graph is set.

    Raises:
        ShapeError: If loss is not a scalar
    """
    if loss.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    graph = Graph.collect(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    reached = {id(loss): loss}

    for tensor in reversed(graph.records):
        upstream = pending.get(id(tensor))
        if upstream is None:
            continue
        node = tensor.node
        input_grads = node.backward_rule(upstream)
        for source, grad in zip(node.inputs, input_grads):
            if grad is None or not source.requires_grad:
                continue
            key = id(source)
            if key in pending:
                pending[key] = pending[key] + grad
            else:
                pending[key] = grad
                reached[key] = source

    for key, grad in pending.items():
        tensor = reached[key]
        grad = np.asarray(grad, dtype=np.float64).reshape(tensor.shape)
        tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad

    if not retain_graph:
        graph.free()


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for tensor in tensors:
        tensor.grad = None


# ----------------------------------------------------------------------
# Shape helpers
# ----------------------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum grad over the axes that were stretched to reach its shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    stretched = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if stretched:
        grad = grad.sum(axis=stretched, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


def _normalize_axes(axis: Axis, ndim: int, op: str) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    normalized = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"{op}: axis {ax} out of range for a tensor of rank {ndim}")
        normalized.append(ax % ndim)
    return tuple(sorted(set(normalized)))


# ----------------------------------------------------------------------
# Binary operations
# ----------------------------------------------------------------------


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    """
    Matrix product over the last two axes; leading axes broadcast.

    Raises:
        ShapeError: If inner extents differ or either operand has rank < 2
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands need rank >= 2, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ for shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch extents of {a.shape} and {b.shape} are not broadcastable") from None

    def rule(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return apply_op("matmul", a.data @ b.data, (a, b), rule)


def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return apply_op("add", a.data + b.data, (a, b), rule)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def rule(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return apply_op("sub", a.data - b.data, (a, b), rule)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def rule(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return apply_op("mul", a.data * b.data, (a, b), rule)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul}


def elementwise(op: str, a: TensorLike, b: TensorLike) -> Tensor:
    """
    Dispatch add / sub / mul by name; b may broadcast over the trailing axes of a, a never stretches.

    The add/sub/mul primitives themselves broadcast both ways (pairwise features need it).

    Raises:
        ShapeError: If the result shape would differ from a's shape
    """
    if op not in _ELEMENTWISE:
        raise ValueError(f"elementwise op must be one of: {', '.join(_ELEMENTWISE)}")
    a, b = as_tensor(a), as_tensor(b)
    if _broadcast_shape(op, a, b) != a.shape:
        raise ShapeError(f"{op}: b of shape {b.shape} does not broadcast over a of shape {a.shape}")
    return _ELEMENTWISE[op](a, b)


# ----------------------------------------------------------------------
# Unary operations
# ----------------------------------------------------------------------


def tanh(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out_data = np.tanh(a.data)
    return apply_op("tanh", out_data, (a,), lambda g: (g * (1.0 - out_data * out_data),))


def exp(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out_data = np.exp(a.data)
    return apply_op("exp", out_data, (a,), lambda g: (g * out_data,))


def log(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return apply_op("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def relu(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    active = a.data > 0
    return apply_op("relu", np.where(active, a.data, 0.0), (a,), lambda g: (g * active,))


def neg(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    return apply_op("neg", -a.data, (a,), lambda g: (-g,))


def scale(a: TensorLike, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return apply_op("scale", a.data * c, (a,), lambda g: (g * c,))


def power(a: TensorLike, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return apply_op("power", np.power(a.data, c), (a,), lambda g: (g * c * np.power(a.data, c - 1.0),))


def clamp_min(a: TensorLike, c: float) -> Tensor:
    """max(a, c); gradient passes only where a > c. NaN entries stay NaN."""
    a = as_tensor(a)
    keep = ~(a.data <= c)
    return apply_op("clamp_min", np.where(keep, a.data, c), (a,), lambda g: (g * keep,))


def sigmoid(a: TensorLike) -> Tensor:
    a = as_tensor(a)
    out_data = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return apply_op("sigmoid", out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),))


_UNARY = {
    "tanh": tanh,
    "exp": exp,
    "log": log,
    "relu": relu,
    "neg": neg,
    "sigmoid": sigmoid,
}


def unary(op: str, a: TensorLike, c: Optional[float] = None) -> Tensor:
    """Dispatch a unary op by name; scale, power and clamp_min take the constant c."""
    if op == "scale":
        return scale(a, c)
    if op == "power":
        return power(a, c)
    if op == "clamp_min":
        return clamp_min(a, c)
    try:
        return _UNARY[op](a)
    except KeyError:
        raise ValueError(f"unknown unary op '{op}'") from None


# ----------------------------------------------------------------------
# Softmax and reductions
# ----------------------------------------------------------------------


def masked_softmax(scores: TensorLike, mask=None, axis: int = -1) -> Tensor:
    """
    Softmax along axis with masked entries forced to exactly zero.

    Args:
        scores: Logits
        mask: Boolean array broadcastable to scores; True marks usable entries.
            None means nothing is masked.
        axis: Normalization axis

    Returns:
        Tensor of the same shape whose unmasked entries along axis sum to 1

    Raises:
        MaskingError: If any row along axis is fully masked
    """
    scores = as_tensor(scores)
    if mask is None:
        keep = np.ones(scores.shape, dtype=bool)
    else:
        mask = mask.data if isinstance(mask, Tensor) else mask
        try:
            keep = np.broadcast_to(np.asarray(mask, dtype=bool), scores.shape)
        except ValueError:
            raise ShapeError(
                f"masked_softmax: mask shape {np.shape(mask)} does not broadcast to scores {scores.shape}"
            ) from None
    if not keep.any(axis=axis).all():
        raise MaskingError("masked_softmax: a row has every entry masked")

    filled = np.where(keep, scores.data, MASK_FILL)
    shifted = filled - filled.max(axis=axis, keepdims=True)
    weights = np.where(keep, np.exp(shifted), 0.0)
    out_data = weights / weights.sum(axis=axis, keepdims=True)

    def rule(g):
        return (out_data * (g - (g * out_data).sum(axis=axis, keepdims=True)),)

    return apply_op("masked_softmax", out_data, (scores,), rule)


def softmax(scores: TensorLike, axis: int = -1) -> Tensor:
    return masked_softmax(scores, None, axis)


def reduce_sum(a: TensorLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim, "sum")

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return apply_op("sum", a.data.sum(axis=axes, keepdims=keepdims), (a,), rule)


def reduce_mean(a: TensorLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim, "mean")
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape),)

    return apply_op("mean", a.data.mean(axis=axes, keepdims=keepdims), (a,), rule)


def reduce(op: str, a: TensorLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    if op == "sum":
        return reduce_sum(a, axis, keepdims)
    if op == "mean":
        return reduce_mean(a, axis, keepdims)
    raise ValueError("reduce op must be one of: sum, mean")


# ----------------------------------------------------------------------
# Structural operations (always copies; gradients route back to sources)
# ----------------------------------------------------------------------


def reshape(a: TensorLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out_data = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return apply_op("reshape", out_data.copy(), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: TensorLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes; the default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise ShapeError(f"transpose: need rank >= 2, got shape {a.shape}")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    if sorted(ax % a.ndim for ax in axes) != list(range(a.ndim)) or len(axes) != a.ndim:
        raise ShapeError(f"transpose: {axes} is not a permutation of the axes of {a.shape}")
    inverse = tuple(np.argsort(axes))
    out_data = np.ascontiguousarray(np.transpose(a.data, axes))
    return apply_op("transpose", out_data, (a,), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    """Join tensors along axis; every other extent must agree."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: nothing to concatenate")
    ndim = tensors[0].ndim
    axis = _normalize_axes(axis, ndim, "concat")[0]
    for t in tensors[1:]:
        if t.ndim != ndim or any(t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis):
            raise ShapeError(
                f"concat: shapes {[x.shape for x in tensors]} disagree outside axis {axis}"
            )
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def rule(g):
        grads = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            index = [slice(None)] * ndim
            index[axis] = slice(int(lo), int(hi))
            grads.append(g[tuple(index)] if t.requires_grad else None)
        return tuple(grads)

    return apply_op("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, rule)


def getitem(a: TensorLike, index) -> Tensor:
    """numpy-style indexing (slices or integer arrays); gradients scatter-add back."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data.astype(np.int64)
    try:
        out_data = np.array(a.data[index], dtype=np.float64)
    except IndexError as exc:
        raise ShapeError(f"index into shape {a.shape} failed: {exc}") from None

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return apply_op("getitem", out_data, (a,), rule)


def slice_axis(a: TensorLike, start: int, stop: int, axis: int = 0) -> Tensor:
    a = as_tensor(a)
    axis = _normalize_axes(axis, a.ndim, "slice")[0]
    if not 0 <= start <= stop <= a.shape[axis]:
        raise ShapeError(f"slice: [{start}:{stop}] out of range for axis {axis} of {a.shape}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    return getitem(a, tuple(index))


def take_rows(table: TensorLike, ids) -> Tensor:
    """
    Gather rows of a 2-D table; output shape is ids.shape + (table width,).

    Raises:
        ShapeError: If any id falls outside the table
    """
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"take_rows: table must be 2-D, got shape {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(
            f"take_rows: id out of range [0, {table.shape[0]}) (min {ids.min()}, max {ids.max()})"
        )

    def rule(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return apply_op("take_rows", table.data[ids], (table,), rule)


def reshape_concat_slice_transpose(kind: str, *args, **kwargs) -> Tensor:
    """Dispatch the structural operations by name."""
    dispatch = {
        "reshape": reshape,
        "concat": concat,
        "slice": slice_axis,
        "transpose": transpose,
    }
    if kind not in dispatch:
        raise ValueError(f"structural op must be one of: {', '.join(dispatch)}")
    return dispatch[kind](*args, **kwargs)
