"""Differentiable primitives: linear algebra, pointwise maps, reductions, reshaping."""

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, make_node


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a, b):
    """``a @ b`` with ``b`` either a matrix or a batch of matrices matching ``a``.

    A 2-D ``b`` is shared across any leading dims of ``a`` (the weight case).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 2:
        raise ShapeError(f"matmul: unsupported shapes {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    out = ad @ bd

    if b.ndim == 2:
        def back(g):
            ga = g @ bd.T if a.requires_grad else None
            gb = None
            if b.requires_grad:
                k, n = bd.shape
                gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
            return ga, gb
    else:
        if a.ndim < 2:
            raise ShapeError(f"matmul: batched rhs needs a matrix lhs, got {a.shape}")

        def back(g):
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), a.shape) if a.requires_grad else None
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, b.shape) if b.requires_grad else None
            return ga, gb

    return make_node(out, (a, b), back, "matmul")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return make_node(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return make_node(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return make_node(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def broadcast_add(x, y):
    """``x + y`` where ``y`` broadcasts into ``x``'s shape (biases, offsets)."""
    x, y = as_tensor(x), as_tensor(y)
    try:
        shape = np.broadcast_shapes(x.shape, y.shape)
    except ValueError:
        shape = None
    if shape != x.shape:
        raise ShapeError(f"broadcast_add: {y.shape} does not broadcast into {x.shape}")
    ys = y.shape
    return make_node(x.data + y.data, (x, y), lambda g: (g, _unbroadcast(g, ys)), "broadcast_add")


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return make_node(x.data * x.data.dtype.type(c), (x,), lambda g: (g * c,), "scale")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "relu", branch=mask)


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1 / (1 + e), e / (1 + e)).astype(d.dtype)
    return make_node(y, (x,), lambda g: (g * y * (1 - y),), "sigmoid")


def clip(x, lo, hi):
    """Clamp to [lo, hi]; gradient passes only strictly inside the interval."""
    x = as_tensor(x)
    inside = (x.data > lo) & (x.data < hi)
    y = np.clip(x.data, lo, hi)
    return make_node(y, (x,), lambda g: (g * inside,), "clip", branch=inside)


def pointwise(x, fn, y=None, *, c=None, lo=None, hi=None):
    """Dispatch by name to the elementwise primitives."""
    unary = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}
    if fn in unary:
        return unary[fn](x)
    if fn == "add":
        return add(x, y)
    if fn == "mul":
        return mul(x, y)
    if fn == "scale":
        return scale(x, c)
    if fn == "clip":
        return clip(x, lo, hi)
    raise ValueError(f"unknown pointwise fn {fn!r}")


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    shape = x.shape
    out = np.sum(x.data, axis=axis)
    axes = _norm_axes(axis, x.ndim)

    def back(g):
        g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.asarray(out), (x,), back, "sum")


def mean(x, axis=None):
    x = as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return scale(sum(x, axis), 1.0 / count)


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x, axes):
    x = as_tensor(x)
    inv = np.argsort(axes)
    return make_node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(x, idx):
    """Basic (slice/int) indexing."""
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] += g
        return (full,)

    return make_node(np.array(x.data[idx]), (x,), back, "getitem")


def concat(xs, axis):
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ShapeError("concat: empty input")
    ndim = xs[0].ndim
    axis = axis % ndim
    for t in xs[1:]:
        if t.ndim != ndim or any(t.shape[d] != xs[0].shape[d] for d in range(ndim) if d != axis):
            raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]} on axis {axis}")
    bounds = np.cumsum([0] + [t.shape[axis] for t in xs])

    def back(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(xs)))

    return make_node(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), back, "concat")


def stack(xs, axis=0):
    xs = [as_tensor(t) for t in xs]
    return concat([reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):]) for t in xs], axis)


def constant(x, dtype=None):
    return Tensor(x, dtype=dtype)
