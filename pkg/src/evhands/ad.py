"""Small reverse-mode automatic differentiation over numpy arrays.

Operations on :class:`Tensor` objects are recorded on the innermost active
:class:`Tape` whenever at least one operand requires a gradient.  Calling
:func:`backward` walks the tape in reverse and accumulates vector-Jacobian
products into every tensor that needs them.

    >>> x = Tensor([1.0, 2.0], requires_grad=True)
    >>> with Tape() as tape:
    ...     y = (x * x).sum()
    >>> backward(tape, y)[x].tolist()
    [2.0, 4.0]
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_default_dtype = np.float32
_tape_stack: list["Tape"] = []


@contextlib.contextmanager
def precision(dtype):
    """Temporarily change the dtype used for new float tensors."""
    global _default_dtype
    old = _default_dtype
    _default_dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _default_dtype = old


def default_dtype():
    return _default_dtype


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "op", "inputs", "vjp", "__weakref__")
    __array_priority__ = 100.0
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(_default_dtype)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = None
        self.inputs: tuple = ()
        self.vjp: Callable | None = None

    # --- plain array access ---------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # --- operator sugar -------------------------------------------------
    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis, keepdims=False):
        return max_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


class Tape:
    """Ordered record of the primitive operations executed inside ``with``."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self):
        _tape_stack.append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def ops(self):
        return [n.op for n in self.nodes]

    def backward(self, loss, wrt=None):
        return backward(self, loss, wrt)


def no_grad_active():
    return not _tape_stack


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if like is not None:
        return Tensor(np.asarray(x, dtype=like.dtype))
    return Tensor(x)


def _pair(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = as_tensor(b, a)
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = as_tensor(a, b)
    else:
        a, b = as_tensor(a), as_tensor(b)
    return a, b


def _node(data, inputs: Sequence[Tensor], vjp, op: str) -> Tensor:
    out = Tensor(data)
    if _tape_stack and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.inputs = tuple(inputs)
        out.vjp = vjp
        out.op = op
        _tape_stack[-1].nodes.append(out)
    return out


def unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --- elementwise -------------------------------------------------------------


def add(a, b):
    a, b = _pair(a, b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = _pair(a, b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = _pair(a, b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def vjp(g):
        ga = g / b.data
        return unbroadcast(ga, a.shape), unbroadcast(-ga * out, b.shape)

    return _node(out, (a, b), vjp, "div")


def neg(a):
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float):
    a = as_tensor(a)
    if p == 2:
        return _node(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,), "square")
    return _node(a.data ** p, (a,), lambda g: (p * a.data ** (p - 1) * g,), "pow")


def square(a):
    return power(a, 2)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def sin(a):
    a = as_tensor(a)
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a):
    a = as_tensor(a)
    return _node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def abs_(a):
    a = as_tensor(a)
    return _node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0)
    return _node(out, (a,), lambda g: (g * (out > 0),), "relu")


# --- reductions ----------------------------------------------------------------


def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g, a.shape, axis, keepdims),), "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return _node(a.data.mean(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g, a.shape, axis, keepdims) / n,), "mean")


def max_(a, axis: int, keepdims=False):
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis)
    if not keepdims:
        out = np.squeeze(out, axis)

    def vjp(g):
        z = np.zeros_like(a.data)
        gg = g if keepdims else np.expand_dims(g, axis)
        np.put_along_axis(z, idx, gg, axis)
        return (z,)

    return _node(out, (a,), vjp, "max")


def norm(a, axis=-1, keepdims=False):
    """Euclidean norm along ``axis``; the subgradient at zero is taken as zero."""
    a = as_tensor(a)
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    out = n if keepdims else np.squeeze(n, axis)

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1)
        return (np.where(n > 0, gg * a.data / safe, 0),)

    return _node(out, (a,), vjp, "norm")


def flush_subnormal(x: np.ndarray) -> np.ndarray:
    """Zero out subnormal entries (they make BLAS kernels very slow)."""
    tiny = np.finfo(x.dtype).tiny
    small = np.abs(x) < tiny
    if small.any():
        x = np.where(small, 0, x).astype(x.dtype)
    return x


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = flush_subnormal(e / e.sum(axis=axis, keepdims=True))
    return _node(y, (a,), lambda g: (flush_subnormal(y * (g - (g * y).sum(axis=axis, keepdims=True))),),
                 "softmax")


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    return _node(out, (a,), lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),), "log_softmax")


# --- linear algebra and shape --------------------------------------------------


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least 2 dimensions")

    def vjp(g):
        g = np.ascontiguousarray(g)
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2 and a.ndim > 2:
            # shared weight matrix: fold the batch axes into one product
            k = a.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return unbroadcast(ga, a.shape), gb

    return _node(a.data @ b.data, (a, b), vjp, "matmul")


def cross(a, b):
    """Cross product along the last axis (length 3)."""
    a, b = _pair(a, b)
    return _node(np.cross(a.data, b.data), (a, b),
                 lambda g: (unbroadcast(np.cross(b.data, g), a.shape),
                            unbroadcast(np.cross(g, a.data), b.shape)), "cross")


def reshape(a, shape):
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    inv = None if axes is None else np.argsort(axes)
    return _node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, i, j):
    a = as_tensor(a)
    return _node(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def concat(tensors: Iterable, axis=0):
    ts = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(np.concatenate([t.data for t in ts], axis=axis), ts,
                 lambda g: tuple(np.split(g, sizes, axis=axis)), "concat")


def stack(tensors: Iterable, axis=0):
    ts = [as_tensor(t) for t in tensors]

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _node(np.stack([t.data for t in ts], axis=axis), ts, vjp, "stack")


def take(a, indices, axis=0):
    """Gather entries of ``a`` along ``axis`` (repeated indices allowed)."""
    a = as_tensor(a)
    idx = np.asarray(indices)

    def vjp(g):
        z = np.zeros_like(a.data)
        zm = np.moveaxis(z, axis, 0)
        gm = np.moveaxis(g, tuple(range(axis, axis + idx.ndim)), tuple(range(idx.ndim)))
        np.add.at(zm, idx, gm)
        return (z,)

    return _node(np.take(a.data, idx, axis=axis), (a,), vjp, "gather")


def getitem(a, key):
    a = as_tensor(a)
    if isinstance(key, Tensor):
        key = key.data

    def vjp(g):
        z = np.zeros_like(a.data)
        np.add.at(z, key, g)
        return (z,)

    return _node(a.data[key], (a,), vjp, "getitem")


# --- backward ---------------------------------------------------------------------


def backward(tape: Tape, loss: Tensor, wrt: Sequence[Tensor] | None = None):
    """Reverse-mode accumulation from the scalar ``loss``.

    Sets ``.grad`` on every leaf tensor that requires a gradient and returns a
    mapping leaf -> gradient.  If ``wrt`` is given, a list aligned with it is
    returned instead, with zeros for tensors that did not influence ``loss``.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    if loss.vjp is None and loss.requires_grad:
        leaves[id(loss)] = loss
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi, dtype=inp.dtype)
            if inp.vjp is None:
                leaves[key] = inp
    out = {}
    for key, leaf in leaves.items():
        leaf.grad = grads[key]
        out[leaf] = leaf.grad
    if wrt is None:
        return out
    return [out[t] if t in out else np.zeros_like(t.data) for t in wrt]


# Tensor hashing is by identity so tensors can key the gradient mapping.
Tensor.__hash__ = object.__hash__
Tensor.__eq__ = object.__eq__
