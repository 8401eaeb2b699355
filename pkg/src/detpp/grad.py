"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record onto the innermost active :class:`Tape`. Outside a tape
nothing is recorded, which is how evaluation runs. Shapes are never
broadcast implicitly: elementwise operands must match exactly, and bias
terms go through :func:`broadcast_to`.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

_ACTIVE: list["Tape"] = []


class ShapeError(ValueError):
    pass


class Tape:
    """Ordered record of primitive applications.

    Backward visits nodes in exact reverse recording order, which is a valid
    topological order because a node can only consume earlier nodes.
    """

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.remove(self)

    def record(self, node: "Tensor") -> None:
        self.nodes.append(node)

    def backward(self, loss: "Tensor") -> None:
        backward(loss, self)


def _current_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


class Tensor:
    __slots__ = ("value", "parents", "backward_fn", "requires_grad", "op", "__weakref__")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    # operator sugar; Python scalars are constants, never broadcast tensors
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_const(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_const(self, -other)

    def __rsub__(self, other):
        return add_const(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)


class Parameter(Tensor):
    """Trainable leaf. ``grad`` accumulates across backward calls."""

    __slots__ = ("name", "grad")

    def __init__(self, value, name: str):
        super().__init__(value, requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, value: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"{op}: non-finite values in output")
    out = Tensor(value)
    out.op = op
    tape = _current_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.parents = parents
        out.backward_fn = backward_fn
        out.requires_grad = True
        tape.record(out)
    return out


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _make("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return _make("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return _make("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def neg(a: Tensor) -> Tensor:
    return _make("neg", -a.value, (a,), lambda g: (-g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make("scale", a.value * c, (a,), lambda g: (g * c,))


def add_const(a: Tensor, c) -> Tensor:
    c = np.asarray(c, dtype=np.float64)
    if c.ndim and c.shape != a.shape:
        raise ShapeError(f"add_const: shape mismatch {a.shape} vs {c.shape}")
    return _make("add_const", a.value + c, (a,), lambda g: (g,))


def abs_(a: Tensor) -> Tensor:
    # np.sign gives subgradient 0 at exactly 0
    s = np.sign(a.value)
    return _make("abs", np.abs(a.value), (a,), lambda g: (g * s,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return _make("exp", y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    x = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x)
    return _make("log", y, (a,), lambda g: (g / x,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.value)
    return _make("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return _make("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def softplus(a: Tensor) -> Tensor:
    x = a.value
    return _make("softplus", _softplus(x), (a,), lambda g: (g * _sigmoid(x),))


def log_sigmoid(a: Tensor) -> Tensor:
    """log(sigmoid(x)) = -softplus(-x), finite for any finite x."""
    x = a.value
    return _make("log_sigmoid", -_softplus(-x), (a,), lambda g: (g * _sigmoid(-x),))


def log_softmax(a: Tensor) -> Tensor:
    """Along the last axis, with max subtraction."""
    x = a.value
    shifted = x - x.max(axis=-1, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    p = np.exp(y)

    def back(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", y, (a,), back)


# ------------------------------------------------------------------ linear


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.value, b.value
    return _make("matmul", av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


# -------------------------------------------------------------- reductions


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    shape = a.shape
    y = a.value.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.full(shape, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make("sum", np.asarray(y), (a,), back)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.value.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis), 1.0 / n)


# ---------------------------------------------------------- shape / select


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _make("reshape", a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast; the backward pass sums over the expanded axes."""
    shape = tuple(shape)
    src = a.shape
    try:
        y = np.broadcast_to(a.value, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot expand {src} to {shape}") from None
    lead = len(shape) - len(src)

    def back(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return (g,)

    return _make("broadcast_to", y, (a,), back)


def slice_(a: Tensor, idx) -> Tensor:
    """Basic (non-fancy) indexing."""
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        out[idx] = g
        return (out,)

    return _make("slice", np.array(a.value[idx]), (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            x != y for i, (x, y) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        "concat",
        np.concatenate([t.value for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def index_select(a: Tensor, index, axis: int = 0) -> Tensor:
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (out,)

    return _make("index_select", np.take(a.value, index, axis=axis), (a,), back)


def gather_flat(a: Tensor, flat_index) -> Tensor:
    """Pick entries by index into the row-major flattening of ``a``."""
    flat_index = np.asarray(flat_index, dtype=np.intp)
    shape = a.shape
    size = a.value.size

    def back(g):
        out = np.bincount(flat_index.ravel(), weights=g.ravel(), minlength=size)
        return (out.reshape(shape),)

    return _make("gather", a.value.reshape(-1)[flat_index], (a,), back)


# ---------------------------------------------------------------- backward


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(param) into every reachable Parameter's ``grad``."""
    if loss.value.size != 1 or loss.value.ndim != 0:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if tape is None:
        tape = _current_tape()
        if tape is None:
            raise RuntimeError("backward: no tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if isinstance(parent, Parameter):
                parent.grad = parent.grad + pg
            else:
                key = id(parent)
                prev = grads.get(key)
                grads[key] = pg if prev is None else prev + pg
    if isinstance(loss, Parameter):
        loss.grad = loss.grad + 1.0


def numerical_grad(f: Callable[[], float], param: Parameter, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of ``f`` with respect to ``param``."""
    out = np.zeros_like(param.value)
    flat = param.value.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out.reshape(-1)[i] = (fp - fm) / (2 * h)
    return out


LN2 = math.log(2.0)
sigmoid_np = _sigmoid
softplus_np = _softplus
