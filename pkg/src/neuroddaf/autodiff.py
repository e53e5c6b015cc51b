"""Minimal reverse-mode differentiation on numpy arrays.

Operations on :class:`Tensor` objects are recorded on the innermost active
:class:`Tape`. ``Tape.backward`` walks the records in reverse execution order
and accumulates vector-Jacobian products. Outside a tape the same functions
run as plain numpy with no recording, which is the inference path.

Every recorded operation names a primitive; its vector-Jacobian product must
be registered in :data:`PRIMITIVES` (see :func:`register_primitive`).
"""
from __future__ import annotations

import numpy as np
from scipy import special

__all__ = [
    "Tensor", "Tape", "UnregisteredPrimitiveError", "register_primitive", "record",
    "tensor", "value", "grad",
    "add", "sub", "mul", "div", "neg", "matmul", "power", "exp", "log", "tanh",
    "sigmoid", "softplus", "absolute", "sqrt", "leaky_relu", "clip_min", "total",
    "mean", "reshape", "swapaxes", "broadcast_to", "concat", "stack", "index",
    "softmax", "lincomb", "gammaln",
]

_ACTIVE: list["Tape"] = []

PRIMITIVES: dict = {}


class UnregisteredPrimitiveError(RuntimeError):
    """Raised by backward when a recorded primitive has no registered VJP."""

    def __init__(self, name):
        super().__init__(f"no vector-Jacobian product registered for primitive {name!r}")
        self.primitive = name


def register_primitive(name, vjp):
    """Register ``vjp(g, out, inputs, ctx) -> tuple of input gradients``."""
    PRIMITIVES[name] = vjp


class Tensor:
    __slots__ = ("data", "requires_grad", "tracked", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.tracked = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __abs__(self):
        return absolute(self)

    def __float__(self):
        return float(self.data)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{label})"

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

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return index(self, idx)


class Tape:
    """Records primitive applications in execution order.

    Use as a context manager; nested tapes are allowed and the innermost one
    records.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss):
        """Return ``{id(tensor): gradient}`` for every tracked tensor reached."""
        if loss.data.size != 1:
            raise ValueError("backward needs a scalar loss")
        grads = {id(loss): np.ones_like(loss.data)}
        for name, out, inputs, ctx in reversed(self.records):
            g = grads.pop(id(out), None) if not out.requires_grad else grads.get(id(out))
            if g is None:
                continue
            vjp = PRIMITIVES.get(name)
            if vjp is None:
                raise UnregisteredPrimitiveError(name)
            for x, gx in zip(inputs, vjp(g, out, inputs, ctx)):
                if gx is None or not (isinstance(x, Tensor) and x.tracked):
                    continue
                if gx.shape != x.data.shape:
                    gx = _unbroadcast(gx, x.data.shape)
                key = id(x)
                prev = grads.get(key)
                grads[key] = gx if prev is None else prev + gx
        return grads

    def gradient(self, loss, params):
        """Gradients of ``loss`` for each tensor in ``params`` (zeros if unreached)."""
        grads = self.backward(loss)
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def grad(fn, params):
    """Evaluate ``fn()`` on a fresh tape; return ``(loss_value, gradients)``."""
    with Tape() as tape:
        loss = fn()
    return float(loss.data), tape.gradient(loss, params)


def tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def value(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def record(name, data, inputs, ctx=None):
    """Wrap ``data`` as the output of primitive ``name`` applied to ``inputs``."""
    out = Tensor(data)
    if _ACTIVE and any(isinstance(x, Tensor) and x.tracked for x in inputs):
        out.tracked = True
        _ACTIVE[-1].records.append((name, out, inputs, ctx))
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic

def add(a, b):
    return record("add", value(a) + value(b), (a, b))


def sub(a, b):
    return record("sub", value(a) - value(b), (a, b))


def mul(a, b):
    return record("mul", value(a) * value(b), (a, b))


def div(a, b):
    return record("div", value(a) / value(b), (a, b))


def neg(a):
    return record("neg", -value(a), (a,))


def matmul(a, b):
    return record("matmul", np.matmul(value(a), value(b)), (a, b))


def power(a, p):
    return record("power", value(a) ** p, (a,), p)


def _swap(x):
    return np.swapaxes(x, -1, -2)


register_primitive("add", lambda g, o, i, c: (g, g))
register_primitive("sub", lambda g, o, i, c: (g, -g))
register_primitive("mul", lambda g, o, i, c: (g * value(i[1]), g * value(i[0])))
register_primitive("div", lambda g, o, i, c: (g / value(i[1]), -g * o.data / value(i[1])))
register_primitive("neg", lambda g, o, i, c: (-g,))
register_primitive("power", lambda g, o, i, c: (g * c * value(i[0]) ** (c - 1),))


def _matmul_vjp(g, out, inputs, ctx):
    a, b = value(inputs[0]), value(inputs[1])
    return np.matmul(g, _swap(b)), np.matmul(_swap(a), g)


register_primitive("matmul", _matmul_vjp)

# ------------------------------------------------------------- elementwise

def exp(a):
    return record("exp", np.exp(value(a)), (a,))


def log(a):
    return record("log", np.log(value(a)), (a,))


def tanh(a):
    return record("tanh", np.tanh(value(a)), (a,))


def sigmoid(a):
    return record("sigmoid", special.expit(value(a)), (a,))


def softplus(a):
    return record("softplus", np.logaddexp(0.0, value(a)), (a,))


def absolute(a):
    return record("abs", np.abs(value(a)), (a,))


def sqrt(a):
    return record("sqrt", np.sqrt(value(a)), (a,))


def leaky_relu(a, slope=0.2):
    x = value(a)
    return record("leaky_relu", np.where(x > 0, x, slope * x), (a,), slope)


def clip_min(a, floor):
    return record("clip_min", np.maximum(value(a), floor), (a,), floor)


def gammaln(a):
    return record("gammaln", special.gammaln(value(a)), (a,))


register_primitive("exp", lambda g, o, i, c: (g * o.data,))
register_primitive("log", lambda g, o, i, c: (g / value(i[0]),))
register_primitive("tanh", lambda g, o, i, c: (g * (1.0 - o.data ** 2),))
register_primitive("sigmoid", lambda g, o, i, c: (g * o.data * (1.0 - o.data),))
register_primitive("softplus", lambda g, o, i, c: (g * special.expit(value(i[0])),))
register_primitive("abs", lambda g, o, i, c: (g * np.sign(value(i[0])),))
register_primitive("sqrt", lambda g, o, i, c: (g * 0.5 / o.data,))
register_primitive("leaky_relu", lambda g, o, i, c: (g * np.where(value(i[0]) > 0, 1.0, c),))
register_primitive("clip_min", lambda g, o, i, c: (g * (value(i[0]) > c),))
register_primitive("gammaln", lambda g, o, i, c: (g * special.digamma(value(i[0])),))

# ------------------------------------------------------------- reductions

def total(a, axis=None, keepdims=False):
    x = value(a)
    return record("sum", x.sum(axis=axis, keepdims=keepdims), (a,), (axis, keepdims, x.shape))


def mean(a, axis=None, keepdims=False):
    x = value(a)
    return record("mean", x.mean(axis=axis, keepdims=keepdims), (a,), (axis, keepdims, x.shape))


def _expand_reduced(g, ctx):
    axis, keepdims, shape = ctx
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def _mean_vjp(g, out, inputs, ctx):
    axis, _, shape = ctx
    count = np.prod(shape) if axis is None else np.prod([shape[a] for a in np.atleast_1d(axis)])
    return (_expand_reduced(g, ctx) / count,)


register_primitive("sum", lambda g, o, i, c: (_expand_reduced(g, c),))
register_primitive("mean", _mean_vjp)

# ------------------------------------------------------------- shape

def reshape(a, shape):
    x = value(a)
    return record("reshape", x.reshape(shape), (a,), x.shape)


def swapaxes(a, ax1, ax2):
    return record("swapaxes", np.swapaxes(value(a), ax1, ax2), (a,), (ax1, ax2))


def broadcast_to(a, shape):
    return record("broadcast_to", np.broadcast_to(value(a), shape), (a,))


def concat(items, axis=-1):
    arrays = [value(x) for x in items]
    sizes = np.cumsum([x.shape[axis] for x in arrays])[:-1]
    return record("concat", np.concatenate(arrays, axis=axis), tuple(items), (axis, sizes))


def stack(items, axis=0):
    return record("stack", np.stack([value(x) for x in items], axis=axis), tuple(items), axis)


def index(a, idx):
    x = value(a)
    return record("index", x[idx], (a,), (idx, x.shape))


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(p is Ellipsis or p is None or isinstance(p, (slice, int, np.integer))
               for p in parts)


def _index_vjp(g, out, inputs, ctx):
    idx, shape = ctx
    full = np.zeros(shape)
    if _is_basic(idx):
        # basic indexing never repeats an element, so plain assignment suffices
        full[idx] = g
    else:
        np.add.at(full, idx, g)
    return (full,)


register_primitive("reshape", lambda g, o, i, c: (g.reshape(c),))
register_primitive("swapaxes", lambda g, o, i, c: (np.swapaxes(g, *c),))
register_primitive("broadcast_to", lambda g, o, i, c: (g,))
register_primitive("concat", lambda g, o, i, c: tuple(np.split(g, c[1], axis=c[0])))
register_primitive(
    "stack", lambda g, o, i, c: tuple(np.take(g, k, axis=c) for k in range(len(i)))
)
register_primitive("index", _index_vjp)

# ------------------------------------------------------------- composites

def softmax(a, axis=-1, mask=None):
    """Softmax along ``axis``; entries where ``mask`` is False get zero weight."""
    x = value(a)
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    x = x - x.max(axis=axis, keepdims=True)
    e = np.exp(x)
    return record("softmax", e / e.sum(axis=axis, keepdims=True), (a,), axis)


def _softmax_vjp(g, out, inputs, ctx):
    s = out.data
    return (s * (g - (g * s).sum(axis=ctx, keepdims=True)),)


register_primitive("softmax", _softmax_vjp)


def lincomb(coeffs, items):
    """``sum(c * x for c, x in zip(coeffs, items))`` as a single primitive."""
    acc = None
    for c, x in zip(coeffs, items):
        if c == 0.0:
            continue
        term = c * value(x)
        acc = term if acc is None else acc + term
    if acc is None:
        acc = np.zeros_like(value(items[0]))
    return record("lincomb", acc, tuple(items), tuple(coeffs))


register_primitive("lincomb", lambda g, o, i, c: tuple(g * k if k != 0.0 else None for k in c))
