"""Tensor value type and the reverse sweep over the recorded graph."""

import threading
from contextlib import contextmanager

import numpy as np

_state = threading.local()


@contextmanager
def no_grad():
    """Evaluate without recording the tape (inference)."""
    prev = getattr(_state, "off", False)
    _state.off = True
    try:
        yield
    finally:
        _state.off = prev


class ShapeError(ValueError):
    pass


class Tensor:
    """An n-dimensional array with an optional gradient slot.

    Tensors produced by ops remember their parents and a backward rule while
    any input requires a gradient; that chain of nodes is the tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "backward_fn", "branch", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.op = "leaf"
        self.parents = ()
        self.backward_fn = None
        self.branch = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dims(self):
        return list(self.data.shape)

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, op={self.op})"

    # operator sugar; the functional forms live in ops
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    def __matmul__(self, other):
        from .ops import matmul
        return matmul(self, other)

    def __neg__(self):
        from .ops import scale
        return scale(self, -1.0)

    def __getitem__(self, idx):
        from .ops import getitem
        return getitem(self, idx)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_node(data, parents, backward_fn, op, branch=None):
    """Wrap an op result; record it on the tape only if a parent needs grads."""
    out = Tensor(data)
    out.op = op
    if not getattr(_state, "off", False) and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
        out.branch = branch
    return out


def topological_order(root):
    """Nodes reachable from root that require grads, parents before children."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every leaf that requires gradients.

    Leaf gradients accumulate across calls; intermediate gradients are
    transient and discarded after the sweep.
    """
    if loss.data.size != 1 or loss.data.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            if node.grad is None:
                node.grad = np.zeros_like(node.data)
            node.grad += g
            continue
        parent_grads = node.backward_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
