"""Tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Operations on tensors that require
gradients record a closure that maps the output gradient to input gradients;
:meth:`Tensor.backward` walks the recorded graph in reverse topological order
and frees it afterwards.
"""

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


class GraphError(RuntimeError):
    """Raised on invalid use of the autodiff graph."""


CHECK_FINITE = True


def _check(data, op):
    if CHECK_FINITE and not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite values produced by {op}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_freed")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._freed = False

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        if self._freed:
            raise GraphError("backward through a graph that has already been freed")
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("loss does not depend on any tensor requiring grad")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._backward is None:
                # leaf: accumulate
                if g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if node._freed:
                raise GraphError("backward through a graph that has already been freed")
            if g is None:
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.dtype != p.data.dtype:
                    pg = pg.astype(p.data.dtype)
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._backward = None
            node._parents = ()
            node._freed = True

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return take(self, index)


def _as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make(data, parents, backward, op):
    """Build a result tensor; attaches the backward closure if any parent needs grad."""
    _check(data, op)
    out = Tensor(data)
    out._op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)
    return make(a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b):
    a = _as_tensor(a)
    b = _as_tensor(b, a.dtype)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make(a.data * b.data, (a, b), backward, "mul")


def absolute(x):
    return make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),), "abs")


def square(x):
    return make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


def clamp(x, lo, hi):
    mask = (x.data >= lo) & (x.data <= hi)
    return make(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,), "clamp")


def relu(x):
    mask = x.data > 0
    return make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x):
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def stop_gradient(x):
    """Forward identity that contributes nothing to upstream gradients."""
    return Tensor(x.data)


def total(x):
    """Sum of all elements, accumulated in float64."""
    s = np.asarray(x.data.sum(dtype=np.float64))
    return make(s, (x,), lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),), "sum")


def mean(x):
    n = x.size
    s = np.asarray(x.data.sum(dtype=np.float64) / n)
    return make(s, (x,), lambda g: (np.broadcast_to(g / n, x.shape).astype(x.dtype),), "mean")


def reshape(x, shape):
    return make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def take(x, index):
    """Basic/advanced indexing along any axes; gradient scatters back."""
    basic = all(isinstance(i, (slice, int)) for i in (index if isinstance(index, tuple) else (index,)))

    def backward(g):
        gx = np.zeros_like(x.data, dtype=g.dtype)
        if basic:
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return make(np.array(x.data[index]), (x,), backward, "take")


def concat(tensors, axis=0):
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward, "concat")


def split(x, n, axis=0):
    """Split into ``n`` equal chunks along ``axis``."""
    size = x.shape[axis] // n
    if size * n != x.shape[axis]:
        raise ValueError(f"cannot split axis of length {x.shape[axis]} into {n} chunks")
    out = []
    for i in range(n):
        sl = [slice(None)] * x.data.ndim
        sl[axis] = slice(i * size, (i + 1) * size)
        out.append(take(x, tuple(sl)))
    return out


def matmul(a, b):
    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return make(a.data @ b.data, (a, b), backward, "matmul")
