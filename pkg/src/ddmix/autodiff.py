"""Minimal reverse-mode automatic differentiation over dense float64 matrices.

Every value is a 2-D ``numpy`` array wrapped in a :class:`Tensor`.  Operations
record their inputs and a backward closure; :func:`backward` walks the
recorded graph in reverse topological order and accumulates gradients into
every tensor that requires them.  The recorded graph is released once the
backward pass is done.

>>> x = Parameter("x", [[3.0]])
>>> backward(x * x)
>>> float(x.grad[0, 0])
6.0
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import NumericError, ShapeError

__all__ = [
    "Tensor", "Parameter", "Module", "no_grad", "is_grad_enabled",
    "as_tensor", "apply_primitive", "backward", "finite_difference_check",
    "matmul", "add", "sub", "mul", "neg", "scale", "relu", "sigmoid", "tanh",
    "exp", "log", "power", "clip", "clamp_positive", "concat_cols",
    "concat_rows", "select_rows", "select_cols", "scatter_rows", "reshape",
    "transpose", "sum", "mean", "l1_norm", "sq_norm", "add_bias",
]

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


def _as_matrix(value):
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"tensors are 2-D, got array of shape {arr.shape}")
    return arr


class Tensor:
    """A dense matrix that may take part in a recorded computation."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False):
        self.value = _as_matrix(value)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.value) if requires_grad else None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def numpy(self):
        return self.value

    def item(self):
        if self.value.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.value[0, 0])

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class Parameter(Tensor):
    """A named trainable tensor."""

    __slots__ = ("name",)

    def __init__(self, name, value):
        super().__init__(value, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class Module:
    """Container that discovers parameters from its attributes.

    Parameters are reported in attribute-definition order, recursing into
    child modules and lists of modules; the dotted attribute path is the
    parameter's canonical name.
    """

    def named_parameters(self, prefix=""):
        out = []
        for key, val in vars(self).items():
            out.extend(_collect(val, prefix + key))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        return {name: p.value.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        named = dict(self.named_parameters())
        if set(named) != set(state):
            missing = sorted(set(named) - set(state))
            extra = sorted(set(state) - set(named))
            raise ShapeError(f"parameter names differ: missing={missing} unexpected={extra}")
        for name, p in named.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.value[...] = arr


def _collect(val, path):
    if isinstance(val, Parameter):
        return [(path, val)]
    if isinstance(val, Module):
        return val.named_parameters(path + ".")
    if isinstance(val, (list, tuple)):
        out = []
        for i, item in enumerate(val):
            out.extend(_collect(item, f"{path}.{i}"))
        return out
    return []


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NumericError(f"{op} produced a non-finite value")


def _make(value, parents, backward_fn, op):
    _check_finite(value, op)
    out = Tensor(value)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# Primitives. Each backward closure receives the output gradient and returns
# one gradient per parent (None where the parent needs none).

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    ga, gb = a.requires_grad, b.requires_grad
    return _make(av @ bv, (a, b),
                 lambda g: (g @ bv.T if ga else None, av.T @ g if gb else None),
                 "matmul")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def add_bias(x, bias):
    """Add a 1 x d bias row to every row of an n x d matrix."""
    x, bias = as_tensor(x), as_tensor(bias)
    if bias.shape != (1, x.shape[1]):
        raise ShapeError(f"add_bias: bias {bias.shape} for input {x.shape}")
    return add(x, bias)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
                 "mul")


def neg(x):
    x = as_tensor(x)
    return _make(-x.value, (x,), lambda g: (-g,), "neg")


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return _make(c * x.value, (x,), lambda g: (c * g,), "scale")


def relu(x):
    x = as_tensor(x)
    mask = x.value > 0
    return _make(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,), "relu")


# [.]_+ and relu coincide; both use subgradient 0 at exactly 0.
clamp_positive = relu


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x):
    x = as_tensor(x)
    s = _sigmoid(x.value)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def tanh(x):
    x = as_tensor(x)
    t = np.tanh(x.value)
    return _make(t, (x,), lambda g: (g * (1.0 - t * t),), "tanh")


def exp(x):
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        e = np.exp(x.value)
    return _make(e, (x,), lambda g: (g * e,), "exp")


def log(x):
    x = as_tensor(x)
    if (x.value <= 0).any():
        raise NumericError("log of a non-positive value")
    xv = x.value
    return _make(np.log(xv), (x,), lambda g: (g / xv,), "log")


def power(x, p):
    x = as_tensor(x)
    p = float(p)
    xv = x.value
    if p < 0 and (xv == 0).any():
        raise NumericError("negative power of zero")
    return _make(xv ** p, (x,), lambda g: (g * p * xv ** (p - 1.0),), "power")


def clip(x, lo, hi):
    x = as_tensor(x)
    inside = (x.value >= lo) & (x.value <= hi)
    return _make(np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,), "clip")


def concat_cols(*xs):
    xs = [as_tensor(x) for x in xs]
    rows = {x.shape[0] for x in xs}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {[x.shape for x in xs]}")
    bounds = np.cumsum([0] + [x.shape[1] for x in xs])
    return _make(np.concatenate([x.value for x in xs], axis=1), tuple(xs),
                 lambda g: tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs))),
                 "concat_cols")


def concat_rows(*xs):
    xs = [as_tensor(x) for x in xs]
    cols = {x.shape[1] for x in xs}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ {[x.shape for x in xs]}")
    bounds = np.cumsum([0] + [x.shape[0] for x in xs])
    return _make(np.concatenate([x.value for x in xs], axis=0), tuple(xs),
                 lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(xs))),
                 "concat_rows")


def select_rows(x, idx):
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    n = x.shape[0]
    if idx.size and (idx.min() < -n or idx.max() >= n):
        raise ShapeError(f"select_rows: index out of range for {n} rows")

    def bw(g):
        out = np.zeros_like(x.value)
        np.add.at(out, idx, g)
        return (out,)
    return _make(x.value[idx], (x,), bw, "select_rows")


def select_cols(x, idx):
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    m = x.shape[1]
    if idx.size and (idx.min() < -m or idx.max() >= m):
        raise ShapeError(f"select_cols: index out of range for {m} columns")

    def bw(g):
        out = np.zeros_like(x.value)
        np.add.at(out.T, idx, g.T)
        return (out,)
    return _make(x.value[:, idx], (x,), bw, "select_cols")


def scatter_rows(x, idx, n):
    """Place row j of ``x`` at row ``idx[j]`` of an n-row zero matrix."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)
    if idx.shape != (x.shape[0],):
        raise ShapeError(f"scatter_rows: {idx.shape[0] if idx.ndim else 0} indices for {x.shape[0]} rows")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ShapeError("scatter_rows: index out of range")
    out = np.zeros((n, x.shape[1]))
    out[idx] = x.value
    return _make(out, (x,), lambda g: (g[idx],), "scatter_rows")


def reshape(x, shape):
    """Row-major reshape to another 2-D shape."""
    x = as_tensor(x)
    old = x.shape
    try:
        val = x.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: {old} -> {shape}") from None
    if val.ndim != 2:
        raise ShapeError("reshape target must be 2-D")
    return _make(val, (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x):
    x = as_tensor(x)
    return _make(x.value.T.copy(), (x,), lambda g: (g.T,), "transpose")


def sum(x, axis=None):
    x = as_tensor(x)
    shape = x.shape
    if axis is None:
        val = np.array([[x.value.sum()]])
    else:
        val = x.value.sum(axis=axis, keepdims=True)
    return _make(val, (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(x, axis=None):
    x = as_tensor(x)
    n = x.value.size if axis is None else x.shape[axis]
    return scale(sum(x, axis), 1.0 / n)


def l1_norm(x):
    x = as_tensor(x)
    sgn = np.sign(x.value)
    return _make(np.array([[np.abs(x.value).sum()]]), (x,), lambda g: (g * sgn,), "l1_norm")


def sq_norm(x):
    """Squared Frobenius norm."""
    x = as_tensor(x)
    xv = x.value
    return _make(np.array([[np.sum(xv * xv)]]), (x,), lambda g: (2.0 * g * xv,), "sq_norm")


_PRIMITIVES = {
    "matmul": matmul, "add": add, "subtract": sub, "multiply": mul,
    "relu": relu, "sigmoid": sigmoid, "tanh": tanh, "exp": exp, "log": log,
    "clamp-positive": clamp_positive, "concat-columns": concat_cols,
    "select-rows": select_rows, "scatter-rows": scatter_rows, "sum": sum,
    "mean": mean, "l1-norm": l1_norm, "l2-norm-squared": sq_norm,
    "broadcast-add-bias": add_bias, "clip": clip, "power": power,
    "reshape": reshape, "transpose": transpose, "select-columns": select_cols,
    "concat-rows": concat_rows, "scale": scale, "negate": neg,
}


def apply_primitive(op_kind, *inputs, **kwargs):
    """Apply a primitive by name, e.g. ``apply_primitive("relu", x)``."""
    try:
        fn = _PRIMITIVES[op_kind]
    except KeyError:
        raise ValueError(f"unknown primitive {op_kind!r}") from None
    return fn(*inputs, **kwargs)


def backward(loss):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tensor requiring grad.

    Leaf gradients are added to, never overwritten, so several backward calls
    between ``zero_grad`` calls sum their contributions.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order, seen, stack = [], set(), [(loss, False)]
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

    grads = {id(loss): np.ones((1, 1))}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.grad is not None:
                node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
        # interior node: release the recorded graph
        node._parents = ()
        node._backward = None


def finite_difference_check(f, params, h=1e-4):
    """Max relative error between backprop gradients and central differences.

    ``f`` takes no arguments and returns a scalar :class:`Tensor` built from
    ``params``.  The error for each coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if isinstance(params, Tensor):
        params = [params]
    for p in params:
        p.zero_grad()
    backward(f())
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                fp = f().item()
            flat[i] = orig - h
            with no_grad():
                fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = analytic.reshape(-1)[i]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
