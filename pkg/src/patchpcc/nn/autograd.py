"""Array-valued reverse-mode autodiff.

Each op records its parents and a closure mapping the output gradient to
per-parent gradients.  Only the ops the point-cloud networks use are
provided; there is no general broadcasting.
"""

import contextlib
import threading

import numpy as np
from scipy.special import expit

from patchpcc._jit import njit
from patchpcc.errors import GraphError, ShapeError

_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Evaluate ops without recording a graph (inference)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A float64 array plus autodiff bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "retain_grad", "name",
                 "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.retain_grad = False
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Accumulate d(self)/d(leaf) into every leaf that requires grad.

        The recorded graph is released afterwards, so a second call (or a
        call on a tensor nobody computed) raises :class:`GraphError`.
        """
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar output, got shape {self.shape}")
        if self._backward is None:
            raise GraphError("no recorded graph for this tensor; run forward first")
        grads = {id(self): np.ones_like(self.data)}
        for node in _reverse_topological(self):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            if node.retain_grad:
                node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            node._parents = ()
            node._backward = None

    # Arithmetic sugar; operands must share a shape (or be Python scalars).
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else shift(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(other, -1.0)) if isinstance(other, Tensor) else shift(self, -other)

    def __neg__(self):
        return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return scale(self, 1.0 / other)


def _reverse_topological(root):
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


def make_op(data, parents, backward):
    """Wrap ``data`` as the output of an op.

    ``backward(g)`` must return one gradient (or None) per parent.  No graph
    is recorded when none of the parents requires grad.
    """
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_same(a, b, what):
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def add(a, b):
    _check_same(a, b, "add")
    return make_op(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a, b):
    _check_same(a, b, "mul")
    ad, bd = a.data, b.data
    return make_op(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x, factor):
    factor = float(factor)
    return make_op(x.data * factor, (x,), lambda g: (g * factor,))


def shift(x, offset):
    return make_op(x.data + offset, (x,), lambda g: (g,))


def affine_const(x, factor, offset):
    """``x * factor + offset`` with constant (non-differentiable) arrays.

    Both constants must broadcast to ``x.shape``; the output keeps that shape.
    """
    factor = np.asarray(factor, dtype=np.float64)
    out = x.data * factor + offset
    if out.shape != x.shape:
        raise ShapeError(f"affine_const: constants broadcast {x.shape} to {out.shape}")
    return make_op(out, (x,), lambda g: (g * factor,))


def total(x):
    return make_op(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def mean(x):
    n = x.data.size
    return make_op(np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def linear(x, w, b=None):
    """Affine map over the last axis: ``x @ w + b``."""
    xd = x.data
    if xd.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {xd.shape[-1]} != weight rows {w.shape[0]}")
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ w.data
    if b is not None:
        out += b.data
    out = out.reshape(xd.shape[:-1] + (w.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ w.data.T).reshape(xd.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, (g2.sum(axis=0) if b.requires_grad else None)

    return make_op(out, (x, w) if b is None else (x, w, b), backward)


def relu(x):
    out = np.maximum(x.data, 0.0)
    return make_op(out, (x,), lambda g: (g * (out > 0.0),))


def sigmoid(x):
    s = expit(x.data)
    return make_op(s, (x,), lambda g: (g * s * (1.0 - s),))


def softmax_last(x):
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return make_op(s, (x,), backward)


@njit(cache=True)
def _max_over_middle(x):
    """Max and first argmax over axis 1 of a C-contiguous (A, G, C) array."""
    a, g, c = x.shape
    out = np.empty((a, c))
    arg = np.zeros((a, c), dtype=np.int64)
    for i in range(a):
        for k in range(c):
            out[i, k] = x[i, 0, k]
        for j in range(1, g):
            for k in range(c):
                v = x[i, j, k]
                if v > out[i, k]:
                    out[i, k] = v
                    arg[i, k] = j
    return out, arg


def max_pool(x, axis=-2):
    """Max over one axis; the gradient goes to the first maximal entry."""
    axis = axis % x.ndim
    shape = x.shape
    lead = int(np.prod(shape[:axis], dtype=np.int64))
    trail = int(np.prod(shape[axis + 1:], dtype=np.int64))
    x3 = np.ascontiguousarray(x.data).reshape(lead, shape[axis], trail)
    out, arg = _max_over_middle(x3)
    out_shape = shape[:axis] + shape[axis + 1:]

    def backward(g):
        gx = np.zeros((lead, shape[axis], trail))
        np.put_along_axis(gx, arg[:, None, :], g.reshape(lead, 1, trail), axis=1)
        return (gx.reshape(shape),)

    return make_op(out.reshape(out_shape), (x,), backward)


def reshape(x, shape):
    shape = tuple(shape)
    old = x.shape
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat_last(a, b):
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat: leading extents {a.shape[:-1]} and {b.shape[:-1]} differ")
    ca = a.shape[-1]
    out = np.concatenate([a.data, b.data], axis=-1)
    return make_op(out, (a, b), lambda g: (g[..., :ca], g[..., ca:]))


def concat_broadcast(per_point, glob):
    """Append a global feature vector to every row along the point axis.

    ``per_point`` has shape ``(..., P, C1)`` and ``glob`` ``(..., C2)`` with the
    same leading extents; the result is ``(..., P, C1 + C2)``.
    """
    if per_point.ndim < 2 or glob.shape[:-1] != per_point.shape[:-2]:
        raise ShapeError(f"concat_broadcast: cannot attach {glob.shape} to {per_point.shape}")
    c1 = per_point.shape[-1]
    tiled = np.broadcast_to(np.expand_dims(glob.data, -2),
                            per_point.shape[:-1] + (glob.shape[-1],))
    out = np.concatenate([per_point.data, tiled], axis=-1)
    return make_op(out, (per_point, glob),
                   lambda g: (g[..., :c1], g[..., c1:].sum(axis=-2)))


def neighbor_offsets(x, idx):
    """``out[b, p, j] = x[b, idx[b, p, j]] - x[b, p]`` for ``x`` of shape (B, P, C)."""
    xd = x.data
    bsz, npts, ch = xd.shape
    rows = np.arange(bsz)[:, None, None]
    out = xd[rows, idx] - xd[:, :, None, :]

    def backward(g):
        flat = (rows * npts + idx).ravel()
        gx = np.empty((bsz * npts, ch))
        for c in range(ch):
            gx[:, c] = np.bincount(flat, weights=g[..., c].ravel(), minlength=bsz * npts)
        return (gx.reshape(xd.shape) - g.sum(axis=2),)

    return make_op(out, (x,), backward)
