"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its operands and a closure mapping the output gradient to operand gradients.
Each recorded node carries a monotonically increasing sequence number, so the
tape for a loss is simply its ancestor set ordered by that number; backward
replays it in exact reverse execution order.

Gradients are written to ``.grad`` of leaf tensors (those created with
``requires_grad=True``) and accumulate across calls until :func:`zero_grad`.
"""
from __future__ import annotations

import contextlib
import itertools
from dataclasses import dataclass

import numpy as np

LOG_EPS = 1e-12

_seq = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """A documented precondition was violated."""


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_seq")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._seq = next(_seq)

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def values(self):
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    """Wrap an op result, recording it on the tape when any operand needs grad."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._seq = next(_seq)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise binary ----------------------------------------------------
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    """Elementwise ``a / b``; the denominator magnitude is clamped to >= 1e-12."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    den = np.where(np.abs(b.data) < LOG_EPS, np.where(b.data < 0, -LOG_EPS, LOG_EPS), b.data)

    def backward(g):
        ga = g / den
        gb = -g * a.data / (den * den)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data / den, (a, b), backward)


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


# -- elementwise unary -----------------------------------------------------
def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x):
    """Natural log with the input clamped to >= 1e-12."""
    x = as_tensor(x)
    clamped = np.maximum(x.data, LOG_EPS)
    return _make(np.log(clamped), (x,), lambda g: (np.where(x.data >= LOG_EPS, g / clamped, 0.0),))


def sigmoid(x):
    x = as_tensor(x)
    out = np.empty_like(x.data)
    pos = x.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def gelu(x):
    """GELU, tanh approximation."""
    x = as_tensor(x)
    c = np.sqrt(2.0 / np.pi)
    u = c * (x.data + 0.044715 * x.data ** 3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = c * (1.0 + 3 * 0.044715 * x.data ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return _make(out, (x,), backward)


def power(x, p):
    x = as_tensor(x)
    return _make(x.data ** p, (x,), lambda g: (g * p * x.data ** (p - 1),))


def sqrt(x):
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


# -- linear algebra --------------------------------------------------------
def matmul(a, b):
    """Batched matrix product following numpy ``@`` broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), backward)


# -- reductions ------------------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    n = 1
    for a in axes:
        n *= x.shape[a]
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / n, x.shape).copy(),)

    return _make(np.asarray(out, dtype=np.float64), (x,), backward)


def softmax(x, axis=-1):
    """Max-subtracted softmax along ``axis``."""
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


# -- shape manipulation ----------------------------------------------------
def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    """Permute axes; default swaps the last two."""
    x = as_tensor(x)
    if axes is None:
        if x.ndim < 2:
            raise ShapeError(f"transpose: need >= 2 dims, got {x.shape}")
        axes = list(range(x.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty operand list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
                t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax)
                     for i in range(len(tensors)))

    return _make(out, tuple(tensors), backward)


def getitem(x, index):
    """Basic or advanced indexing; backward scatters with accumulation."""
    x = as_tensor(x)
    try:
        out = x.data[index]
    except IndexError as err:
        raise ShapeError(f"slice: {err} for shape {x.shape}") from None

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, dtype=np.float64), (x,), backward)


def slice_axis(x, start, stop, axis=-1):
    """Contiguous slice ``[start:stop]`` along one axis."""
    x = as_tensor(x)
    ax = axis % x.ndim
    if not 0 <= start <= stop <= x.shape[ax]:
        raise ShapeError(f"slice: [{start}:{stop}] out of range for axis of size {x.shape[ax]}")
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        return (full,)

    return _make(x.data[idx].copy(), (x,), backward)


def take(x, indices, axis=0):
    """Gather whole slices along ``axis`` (e.g. a permutation of positions)."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    ax = axis % x.ndim

    def backward(g):
        full = np.zeros_like(x.data)
        sl = [slice(None)] * x.ndim
        if len(np.unique(indices)) == len(indices):
            sl[ax] = indices
            full[tuple(sl)] = g
        else:
            np.add.at(np.moveaxis(full, ax, 0), indices, np.moveaxis(g, ax, 0))
        return (full,)

    return _make(np.take(x.data, indices, axis=ax), (x,), backward)


def take_along_axis(x, indices, axis):
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    ax = axis % x.ndim

    def backward(g):
        full = np.zeros_like(x.data)
        # scatter-add handles repeated indices
        grid = list(np.indices(indices.shape, sparse=True))
        grid[ax] = indices
        np.add.at(full, tuple(grid), g)
        return (full,)

    return _make(np.take_along_axis(x.data, indices, axis=ax), (x,), backward)


def broadcast_to(x, shape):
    x = as_tensor(x)
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {x.shape} to {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (_unbroadcast(g, x.shape),))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    return concat([reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                   for t in tensors], axis=axis)


def where(cond, a, b):
    """Select from ``a`` where ``cond`` else ``b``; ``cond`` is a constant mask."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)
    return _make(out, (a, b), lambda g: (_unbroadcast(np.where(cond, g, 0.0), a.shape),
                                         _unbroadcast(np.where(cond, 0.0, g), b.shape)))


# -- custom ops -------------------------------------------------------------
def custom_op(data, parents, backward):
    """Record a hand-written op: ``backward(g)`` returns one gradient per parent."""
    return _make(np.asarray(data, dtype=np.float64), tuple(parents), backward)


# -- backward --------------------------------------------------------------
def build_tape(loss):
    """Ancestors of ``loss`` that carry a backward rule, in execution order."""
    seen = set()
    nodes = []
    stack_ = [loss]
    while stack_:
        t = stack_.pop()
        if id(t) in seen or t._backward is None:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack_.extend(t._parents)
    nodes.sort(key=lambda t: t._seq)
    return nodes


def backward(loss):
    """Populate ``.grad`` on every leaf that ``loss`` depends on.

    Gradients add into existing ``.grad`` buffers, so calling this twice
    without :func:`zero_grad` doubles them.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = build_tape(loss)
    if not tape:
        raise ContractError("backward: loss has no recorded operations")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent._backward is None:
                pg = np.asarray(pg, dtype=np.float64).reshape(parent.shape)
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def zero_grad(params):
    for p in params:
        p.grad = None


# -- finite-difference verification -----------------------------------------
@dataclass
class GradcheckReport:
    max_rel_error: float
    max_abs_error: float
    n_checked: int
    passed: bool
    worst_index: tuple | None = None

    def __bool__(self):
        return self.passed


def gradcheck(f, x, step=1e-3, rel_tol=1e-4, abs_tol=1e-7, small=1e-6,
              indices=None, zero_first=True):
    """Compare tape gradients of scalar ``f(x)`` with central differences.

    An entry passes when its relative error is within ``rel_tol``, or, where
    both gradients are smaller than ``small`` in magnitude, when the absolute
    error is within ``abs_tol``.  ``indices`` restricts the probe to a subset
    of flat positions.
    """
    if not x.requires_grad:
        raise ContractError("gradcheck: x must require grad")
    if zero_first:
        x.grad = None
    out = f(x)
    if out.data.size != 1:
        raise ContractError(f"gradcheck: f must be scalar-valued, got shape {out.shape}")
    backward(out)
    analytic = np.zeros(x.data.size) if x.grad is None else x.grad.reshape(-1).copy()

    flat = x.data.reshape(-1)
    probe = range(flat.size) if indices is None else indices
    worst_rel = worst_abs = 0.0
    worst_idx = None
    ok = True
    n = 0
    with no_grad():
        for i in probe:
            orig = flat[i]
            flat[i] = orig + step
            fp = f(x).item()
            flat[i] = orig - step
            fm = f(x).item()
            flat[i] = orig
            numeric = (fp - fm) / (2 * step)
            a = analytic[i]
            err = abs(a - numeric)
            scale = max(abs(a), abs(numeric))
            rel = 0.0 if scale == 0 else err / scale
            good = rel <= rel_tol or (scale < small and err <= abs_tol)
            if scale >= small and rel > worst_rel:
                worst_rel, worst_idx = rel, np.unravel_index(i, x.shape)
            worst_abs = max(worst_abs, err)
            ok &= good
            n += 1
    if worst_idx is not None:
        worst_idx = tuple(int(j) for j in worst_idx)
    return GradcheckReport(float(worst_rel), float(worst_abs), n, bool(ok), worst_idx)


class Rng:
    """Seeded generator that every initializer draws from."""

    def __init__(self, seed=0):
        self.seed = seed
        self.gen = np.random.default_rng(seed)

    def normal(self, shape, std=1.0):
        return self.gen.normal(0.0, std, size=shape)

    def uniform(self, shape, low=0.0, high=1.0):
        return self.gen.uniform(low, high, size=shape)

    def param(self, shape, std=0.02, name=None):
        return Tensor(self.normal(shape, std), requires_grad=True, name=name)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size=size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def choice(self, *args, **kwargs):
        return self.gen.choice(*args, **kwargs)

    def random(self, size=None):
        return self.gen.random(size)
