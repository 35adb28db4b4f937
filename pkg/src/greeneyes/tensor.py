"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Operations executed while a :class:`Tape` is active record themselves on it
whenever one of their inputs requires a gradient. :func:`backward` replays
the tape in reverse and returns gradients keyed by ``node_id``.

All ops accept arbitrary leading (batch) axes. Binary ops broadcast with
the usual trailing-axis rules; gradients are summed back over broadcast
axes. Every op output is checked for NaN/Inf, which raise
:class:`~greeneyes.errors.NonFiniteError` instead of propagating.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DivisionByZeroError, NonFiniteError, ShapeError, TapeError

__all__ = [
    "Tensor",
    "Tape",
    "tensor_create",
    "unary_map",
    "binary_op",
    "matmul",
    "reduce",
    "softmax",
    "reshape",
    "transpose",
    "slice_axis",
    "take",
    "stack",
    "concat",
    "shift",
    "backward",
    "grad_check",
    "tanh",
    "sigmoid",
    "exp",
    "relu",
]

_node_ids = itertools.count(1)
_state = threading.local()


def _tape_stack():
    stack = getattr(_state, "tapes", None)
    if stack is None:
        stack = _state.tapes = []
    return stack


def active_tape() -> Tape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op}: produced non-finite values")
    return arr


class Tensor:
    """Immutable float64 array with an identity on the autodiff tape."""

    __slots__ = ("data", "requires_grad", "node_id")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self._init(arr, requires_grad)
        if requires_grad:
            tape = active_tape()
            if tape is not None:
                tape._add_leaf(self.node_id, arr.shape)

    def _init(self, arr: np.ndarray, requires_grad: bool) -> None:
        if type(arr) is not np.ndarray or arr.dtype != np.float64:
            arr = np.asarray(arr, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)

    @classmethod
    def _from_op(cls, arr: np.ndarray, requires_grad: bool) -> Tensor:
        out = cls.__new__(cls)
        out._init(arr, requires_grad)
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return binary_op("add", self, other)

    def __radd__(self, other):
        return binary_op("add", other, self)

    def __sub__(self, other):
        return binary_op("sub", self, other)

    def __rsub__(self, other):
        return binary_op("sub", other, self)

    def __mul__(self, other):
        return binary_op("mul", self, other)

    def __rmul__(self, other):
        return binary_op("mul", other, self)

    def __truediv__(self, other):
        return binary_op("div", self, other)

    def __rtruediv__(self, other):
        return binary_op("div", other, self)

    def __neg__(self):
        return unary_map("neg", self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce("mean", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor_create(shape: Sequence[int], values: Iterable[float], requires_grad: bool = False) -> Tensor:
    """Build a tensor from a row-major flat value list."""
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    flat = np.asarray(list(values), dtype=np.float64)
    if flat.size != int(np.prod(shape, dtype=np.int64)):
        raise ShapeError(f"{flat.size} values do not fill shape {shape}")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed differentiable operations.

    Use as a context manager; tapes nest per thread and are single use.
    """

    def __init__(self):
        self.records: list[tuple[int, tuple[int, ...], Callable]] = []
        self.leaves: list[int] = []
        self.leaf_shapes: dict[int, tuple[int, ...]] = {}
        self._known: set[int] = set()
        self.consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def _add_leaf(self, node_id: int, shape: tuple[int, ...]) -> None:
        if node_id not in self._known:
            self._known.add(node_id)
            self.leaves.append(node_id)
            self.leaf_shapes[node_id] = shape

    def _record(self, out: Tensor, inputs: Sequence[Tensor], rule: Callable) -> None:
        if self.consumed:
            raise TapeError("cannot record on a consumed tape")
        for t in inputs:
            if t.requires_grad and t.node_id not in self._known:
                self._add_leaf(t.node_id, t.shape)
        self._known.add(out.node_id)
        self.records.append((out.node_id, tuple(t.node_id for t in inputs), rule))

    def __len__(self):
        return len(self.records)


def _emit(arr: np.ndarray, op: str, inputs: Sequence[Tensor], rule: Callable) -> Tensor:
    """Wrap an op result and record it when a gradient is needed.

    ``rule(g)`` returns one gradient array (or None) per input.
    """
    _check_finite(arr, op)
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor._from_op(arr, needs)
    if needs:
        tape._record(out, inputs, rule)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def unary_map(kind: str, x: Tensor) -> Tensor:
    x = _as_tensor(x)
    a = x.data
    if kind == "tanh":
        y = np.tanh(a)
        rule = lambda g: (g * (1.0 - y * y),)
    elif kind == "sigmoid":
        y = _sigmoid(a)
        rule = lambda g: (g * y * (1.0 - y),)
    elif kind == "exp":
        with np.errstate(over="ignore"):
            y = np.exp(a)
        if not np.isfinite(y).all():
            raise NonFiniteError("exp: overflow beyond float64 range")
        rule = lambda g: (g * y,)
    elif kind == "relu":
        y = np.maximum(a, 0.0)
        rule = lambda g: (g * (a > 0),)
    elif kind == "neg":
        y = -a
        rule = lambda g: (-g,)
    else:
        raise ValueError(f"unknown unary op {kind!r}")
    return _emit(y, kind, (x,), rule)


def tanh(x):
    return unary_map("tanh", x)


def sigmoid(x):
    return unary_map("sigmoid", x)


def exp(x):
    return unary_map("exp", x)


def relu(x):
    return unary_map("relu", x)


def binary_op(kind: str, a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    x, y = a.data, b.data
    try:
        np.broadcast_shapes(x.shape, y.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {x.shape} and {y.shape} do not broadcast") from None
    sa, sb = x.shape, y.shape
    if kind == "add":
        with np.errstate(over="ignore", invalid="ignore"):
            out = x + y
        rule = lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    elif kind == "sub":
        with np.errstate(over="ignore", invalid="ignore"):
            out = x - y
        rule = lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb))
    elif kind == "mul":
        with np.errstate(over="ignore", invalid="ignore"):
            out = x * y
        rule = lambda g: (_unbroadcast(g * y, sa), _unbroadcast(g * x, sb))
    elif kind == "div":
        if (y == 0).any():
            raise DivisionByZeroError("div: division by zero")
        with np.errstate(over="ignore", invalid="ignore"):
            out = x / y
        rule = lambda g: (_unbroadcast(g / y, sa), _unbroadcast(-g * out / y, sb))
    else:
        raise ValueError(f"unknown binary op {kind!r}")
    return _emit(out, kind, (a, b), rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    x, y = a.data, b.data
    if x.ndim < 2 or y.ndim < 2:
        raise ShapeError("matmul: operands need at least two axes")
    if x.shape[-1] != y.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ, {x.shape} @ {y.shape}")
    try:
        out = x @ y
    except ValueError as exc:
        raise ShapeError(f"matmul: {exc}") from None
    sa, sb = x.shape, y.shape

    def rule(g):
        ga = g @ np.swapaxes(y, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return _unbroadcast(ga, sa), _unbroadcast(gb, sb)

    return _emit(out, "matmul", (a, b), rule)


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


def reduce(kind: str, x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    a = x.data
    if a.size == 0:
        raise ShapeError(f"{kind}: empty tensor")
    if axis is not None:
        axis = _norm_axis(axis, a.ndim)
    shape = a.shape

    def expand(g):
        if axis is None:
            return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)

    if kind == "sum":
        out = a.sum(axis=axis, keepdims=keepdims)
        rule = lambda g: (np.array(expand(g)),)
    elif kind == "mean":
        count = a.size if axis is None else shape[axis]
        out = a.sum(axis=axis, keepdims=keepdims) / count
        rule = lambda g: (expand(g) / count,)
    elif kind == "max":
        out = a.max(axis=axis, keepdims=keepdims)
        hit = (a == expand(out)).astype(np.float64)
        hit /= hit.sum(axis=axis, keepdims=True)
        rule = lambda g: (expand(g) * hit,)
    else:
        raise ValueError(f"unknown reduction {kind!r}")
    return _emit(np.asarray(out, dtype=np.float64), kind, (x,), rule)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    a = x.data
    axis = _norm_axis(axis, a.ndim)
    e = np.exp(a - a.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit(y, "softmax", (x,), rule)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    x = _as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from None
    return _emit(out, "reshape", (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    x = _as_tensor(x)
    if x.ndim < 2:
        raise ShapeError("transpose: need at least two axes")
    return _emit(np.swapaxes(x.data, -1, -2), "transpose", (x,), lambda g: (np.swapaxes(g, -1, -2),))


def slice_axis(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = x.data[index]
    if out.size == 0:
        raise ShapeError(f"slice [{start}:{stop}] on axis {axis} is empty")
    shape = x.shape

    def rule(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _emit(out, "slice", (x,), rule)


def take(x: Tensor, index: int, axis: int = 0) -> Tensor:
    """Select one position along ``axis``, dropping that axis."""
    x = _as_tensor(x)
    axis = _norm_axis(axis, x.ndim)
    if not -x.shape[axis] <= index < x.shape[axis]:
        raise ShapeError(f"take: index {index} out of range for axis {axis}")
    out = np.take(x.data, index, axis=axis)
    shape = x.shape

    def rule(g):
        full = np.zeros(shape)
        sel = [slice(None)] * len(shape)
        sel[axis] = index
        full[tuple(sel)] = g
        return (full,)

    return _emit(out, "take", (x,), rule)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [_as_tensor(t) for t in xs]
    if not xs:
        raise ShapeError("stack: no tensors")
    try:
        out = np.stack([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack: {exc}") from None
    ax = _norm_axis(axis, out.ndim)

    def rule(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(xs)))

    return _emit(out, "stack", xs, rule)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [_as_tensor(t) for t in xs]
    if not xs:
        raise ShapeError("concat: no tensors")
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    ax = _norm_axis(axis, out.ndim)
    cuts = np.cumsum([t.shape[ax] for t in xs])[:-1]

    def rule(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _emit(out, "concat", xs, rule)


def shift(x: Tensor, steps: int, axis: int = -2) -> Tensor:
    """Delay along ``axis`` by ``steps``, filling the head with zeros.

    ``out[t] = x[t - steps]`` for ``t >= steps`` and 0 before; length kept.
    """
    x = _as_tensor(x)
    if steps < 0:
        raise ValueError("shift: steps must be non-negative")
    if steps == 0:
        return x
    axis = _norm_axis(axis, x.ndim)
    n = x.shape[axis]
    out = np.zeros_like(x.data)
    dst = [slice(None)] * x.ndim
    src = [slice(None)] * x.ndim
    if steps < n:
        dst[axis] = slice(steps, None)
        src[axis] = slice(0, n - steps)
        out[tuple(dst)] = x.data[tuple(src)]
    dst, src = tuple(dst), tuple(src)

    def rule(g):
        gx = np.zeros_like(g)
        if steps < n:
            gx[src] = g[dst]
        return (gx,)

    return _emit(out, "shift", (x,), rule)


def backward(tape: Tape, loss: Tensor, wrt: Iterable[Tensor] = ()) -> dict[int, Tensor]:
    """Reverse-mode sweep over ``tape`` from a scalar ``loss``.

    Returns ``{node_id: gradient}`` for every leaf seen by the tape and for
    every tensor in ``wrt``; leaves off the loss path get zeros. The tape is
    consumed.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, shape is {loss.shape}")
    if tape.consumed:
        raise TapeError("backward: tape already consumed")
    if loss.node_id not in tape._known:
        raise TapeError("backward: loss was not recorded on this tape")
    tape.consumed = True

    leaf_ids = set(tape.leaves)
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
    for out_id, in_ids, rule in reversed(tape.records):
        g = grads.get(out_id) if out_id in leaf_ids else grads.pop(out_id, None)
        if g is None:
            continue
        for node, gi in zip(in_ids, rule(g)):
            if gi is None or node not in tape._known:
                continue
            if node in grads:
                grads[node] = grads[node] + gi
            else:
                grads[node] = gi

    shapes = dict(tape.leaf_shapes)
    for t in wrt:
        shapes.setdefault(t.node_id, t.shape)
    result = {}
    for node, shape in shapes.items():
        g = grads.get(node)
        g = np.zeros(shape) if g is None else np.array(g, dtype=np.float64)
        result[node] = Tensor._from_op(_check_finite(g, "backward"), False)
    return result


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    Relative error per coordinate is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    x0 = np.array(x.data, dtype=np.float64)
    with Tape() as tape:
        xv = Tensor(x0, requires_grad=True)
        out = f(xv)
    analytic = backward(tape, out, wrt=[xv])[xv.node_id].data
    if analytic.shape != x0.shape:
        analytic = np.broadcast_to(analytic, x0.shape)

    numeric = np.empty_like(x0)
    flat = numeric.reshape(-1)
    for i in range(x0.size):
        xp = x0.copy()
        xp.reshape(-1)[i] += eps
        xm = x0.copy()
        xm.reshape(-1)[i] -= eps
        flat[i] = (f(Tensor(xp)).item() - f(Tensor(xm)).item()) / (2.0 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
