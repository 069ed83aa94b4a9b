"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor` whose ``_parents`` and
``_backward`` closure record how to push gradients back to its inputs. The
tape is implicit in these links and is rebuilt on every forward pass;
:func:`tape` materializes it in topological order.

``log`` and ``div`` clamp their (denominator) inputs to a magnitude of at
least ``EPS`` so that losses built on estimated probabilities stay finite.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractViolation, DimensionError

EPS = 1e-12

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (per thread / context)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


class Tensor:
    """An n-d float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op="leaf"):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: Callable | None = _backward
        self.op = op

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators -----------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def max(self, axis=None, keepdims=False):
        return reduce_max(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def square(self):
        return square(self)

    def sqrt(self):
        return sqrt(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable, op: str) -> Tensor:
    track = _grad_enabled.get() and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- binary elementwise -----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), bw, "mul")


def _guard_denominator(x: np.ndarray) -> np.ndarray:
    sign = np.where(x < 0, -1.0, 1.0)
    return sign * np.maximum(np.abs(x), EPS)


def div(a, b) -> Tensor:
    """``a / b`` with ``|b|`` floored at ``EPS`` (zero maps to ``+EPS``)."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    denom = _guard_denominator(b.data)
    clamped = np.abs(b.data) < EPS
    out = a.data / denom

    def bw(g):
        ga = _unbroadcast(g / denom, a.shape)
        gb = -g * out / denom
        gb = np.where(clamped, 0.0, gb)
        return ga, _unbroadcast(gb, b.shape)

    return _make(out, (a, b), bw, "div")


def maximum(a, b) -> Tensor:
    """Elementwise maximum; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "maximum")
    pick_a = a.data >= b.data

    def bw(g):
        return _unbroadcast(np.where(pick_a, g, 0.0), a.shape), _unbroadcast(np.where(pick_a, 0.0, g), b.shape)

    return _make(np.maximum(a.data, b.data), (a, b), bw, "maximum")


# -- unary elementwise ------------------------------------------------------


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    """Natural log of ``max(a, EPS)``."""
    a = as_tensor(a)
    safe = np.maximum(a.data, EPS)
    live = a.data >= EPS

    def bw(g):
        return (np.where(live, g / safe, 0.0),)

    return _make(np.log(safe), (a,), bw, "log")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    # np.maximum keeps NaN visible instead of mapping it to zero
    return _make(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")


def sqrt(a) -> Tensor:
    """Square root; the input must be non-negative, the derivative uses ``max(out, EPS)``."""
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ContractViolation("sqrt of a negative value")
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (0.5 * g / np.maximum(out, EPS),), "sqrt")


def clamp_min(a, lo: float) -> Tensor:
    a = as_tensor(a)
    keep = a.data >= lo
    return _make(np.where(keep, a.data, lo), (a,), lambda g: (g * keep,), "clamp_min")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


_UNARY = {"exp": exp, "log": log, "relu": relu, "square": square, "neg": neg, "sqrt": sqrt, "sigmoid": sigmoid}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div, "maximum": maximum}


def elementwise(op: str, *inputs) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if op in _UNARY:
        if len(inputs) != 1:
            raise ContractViolation(f"{op} takes one input, got {len(inputs)}")
        return _UNARY[op](inputs[0])
    if op in _BINARY:
        if len(inputs) != 2:
            raise ContractViolation(f"{op} takes two inputs, got {len(inputs)}")
        return _BINARY[op](*inputs)
    raise ContractViolation(f"unknown elementwise op {op!r}")


# -- linear algebra and shape ops ------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def transpose(a, axes: Sequence[int] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"transpose: {axes} is not a permutation of the axes of {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data[index]
    except IndexError as exc:
        raise DimensionError(f"index {index!r} invalid for shape {a.shape}: {exc}") from None

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out), (a,), bw, "getitem")


def concatenate(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractViolation("concatenate needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except (ValueError, np.exceptions.AxisError) as exc:
        raise DimensionError(f"concatenate: {[t.shape for t in tensors]} along axis {axis}: {exc}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _make(out, tuple(tensors), bw, "concatenate")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise DimensionError(f"stack: shapes differ {[t.shape for t in tensors]}")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def bw(g):
        return tuple(np.moveaxis(g, ax, 0))

    return _make(out, tuple(tensors), bw, "stack")


# -- reductions -------------------------------------------------------------


def _check_axis(a: Tensor, axis) -> tuple[int, ...] | None:
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, (int, np.integer)) else tuple(axis)
    norm = []
    for ax in axes:
        if not -a.ndim <= ax < a.ndim:
            raise DimensionError(f"axis {ax} out of range for shape {a.shape}")
        norm.append(int(ax) % a.ndim)
    return tuple(norm)


def _expand(g: np.ndarray, a: Tensor, axes, keepdims: bool) -> np.ndarray:
    if axes is None:
        return np.broadcast_to(np.reshape(g, (1,) * a.ndim), a.shape)
    if not keepdims:
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, a.shape)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _check_axis(a, axis)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    return _make(out, (a,), lambda g: (_expand(g, a, axes, keepdims).copy(),), "sum")


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _check_axis(a, axis)
    out = a.data.mean(axis=axes, keepdims=keepdims)
    count = a.data.size / max(out.size, 1) if a.data.size else 1.0
    return _make(out, (a,), lambda g: (_expand(g, a, axes, keepdims) / count,), "mean")


def reduce_max(a, axis=None, keepdims: bool = False) -> Tensor:
    """Maximum; the gradient is shared equally among tied maxima."""
    a = as_tensor(a)
    axes = _check_axis(a, axis)
    out = a.data.max(axis=axes, keepdims=keepdims)

    def bw(g):
        m = _expand(out, a, axes, keepdims)
        hit = (a.data == m).astype(np.float64)
        ties = hit.sum(axis=axes, keepdims=True)
        return (hit / ties * _expand(g, a, axes, keepdims),)

    return _make(out, (a,), bw, "max")


_REDUCERS = {"sum": reduce_sum, "mean": reduce_mean, "max": reduce_max}


def reduce(op: str, a, axis=None, keepdims: bool = False) -> Tensor:
    if op not in _REDUCERS:
        raise ContractViolation(f"unknown reduction {op!r}")
    return _REDUCERS[op](a, axis, keepdims)


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    a = as_tensor(a)
    (ax,) = _check_axis(a, axis)
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=ax, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=ax, keepdims=True)),)

    return _make(out, (a,), bw, "softmax")


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    (ax,) = _check_axis(a, axis)
    m = a.data.max(axis=ax, keepdims=True)
    s = np.exp(a.data - m).sum(axis=ax, keepdims=True)
    out = m + np.log(s)
    weights = np.exp(a.data - out)
    result = out if keepdims else np.squeeze(out, axis=ax)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, ax)
        return (weights * g,)

    return _make(result, (a,), bw, "logsumexp")


# -- backward pass ----------------------------------------------------------


def tape(root: Tensor) -> list[Tensor]:
    """Tracked nodes reachable from ``root`` in topological order (inputs first)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every gradient-tracked leaf reachable from ``loss``.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        shape = getattr(loss, "shape", None)
        raise ContractViolation(f"backward needs a scalar loss, got shape {shape}")
    if not loss.requires_grad:
        return
    order = tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64)


# -- verification harness -----------------------------------------------------


def grad_check(f: Callable, x, epsilon: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``x`` is a Tensor/array or a sequence of them; ``f`` receives the same
    structure and must return a scalar Tensor. The error per component is
    ``|a - n| / (|a| + |n| + 1e-12)``.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ContractViolation(f"epsilon {epsilon} outside [1e-7, 1e-3]")
    single = isinstance(x, (Tensor, np.ndarray))
    arrays = [np.array(as_tensor(x).data if single else as_tensor(t).data, dtype=np.float64)
              for t in ([x] if single else x)]

    def call(datas, track):
        leaves = [Tensor(d, requires_grad=track) for d in datas]
        out = f(leaves[0] if single else leaves)
        if not isinstance(out, Tensor) or out.data.size != 1:
            raise ContractViolation("grad_check needs a scalar-valued function")
        return leaves, out

    leaves, out = call(arrays, True)
    backward(out)
    worst = 0.0
    with no_grad():
        for leaf, base in zip(leaves, arrays):
            analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)
            for idx in np.ndindex(base.shape):
                orig = base[idx]
                base[idx] = orig + epsilon
                fp = call(arrays, False)[1].item()
                base[idx] = orig - epsilon
                fm = call(arrays, False)[1].item()
                base[idx] = orig
                numeric = (fp - fm) / (2.0 * epsilon)
                a = analytic[idx]
                err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
                worst = max(worst, err)
    return worst


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
