"""Minimal reverse-mode autodiff over dense float64 numpy arrays.

The op set is deliberately small: matmul, add, multiply, row gather,
log-softmax, reductions, sigmoid, log, exp, concat. That closed set is
enough to express every loss in this package while keeping each op's
adjoint a few lines of numpy.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "backward",
    "finite_diff",
    "relative_error",
    "add",
    "mul",
    "matmul",
    "gather_rows",
    "take_along_rows",
    "log_softmax",
    "tsum",
    "tmean",
    "sigmoid",
    "log_sigmoid",
    "tlog",
    "texp",
    "concat_rows",
]


class Tensor:
    """Dense n-d float64 array with an optional gradient slot.

    Leaf tensors carry ``requires_grad``; intermediate tensors remember
    their parents and a closure computing parent adjoints. Tensors are
    value types: nothing here shares mutable state across graphs.
    """

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward_fn")

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.values.shape

    def item(self):
        return float(self.values.reshape(-1)[0])

    def copy(self, requires_grad=None):
        rg = self.requires_grad if requires_grad is None else requires_grad
        return Tensor(self.values.copy(), requires_grad=rg)

    # operator sugar; scalars are wrapped as constants
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __sub__(self, other):
        return add(self, -_wrap(other))

    def __rsub__(self, other):
        return add(_wrap(other), -self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is outside the op set")
        return mul(self, Tensor(1.0 / float(other)))

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _node(values, parents, backward_fn):
    """Create an op output; constant subgraphs are folded into leaves."""
    if not any(p.requires_grad for p in parents):
        return Tensor(values)
    out = Tensor(values, requires_grad=True)
    out._parents = tuple(parents)
    out._backward_fn = backward_fn
    return out


# ---------------------------------------------------------------------------
# ops


def add(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = a.values, b.values

    def bwd(g):
        ga = g if av.shape == g.shape else np.sum(g) * np.ones_like(av) if av.ndim == 0 else _unbroadcast(g, av.shape)
        gb = g if bv.shape == g.shape else np.sum(g) * np.ones_like(bv) if bv.ndim == 0 else _unbroadcast(g, bv.shape)
        return ga, gb

    return _node(av + bv, (a, b), bwd)


def _unbroadcast(g, shape):
    # collapse broadcast axes back to `shape`
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = a.values, b.values

    def bwd(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _node(av * bv, (a, b), bwd)


def matmul(a, b):
    a, b = _wrap(a), _wrap(b)
    av, bv = a.values, b.values

    def bwd(g):
        if av.ndim == 1:
            ga = g @ bv.T
            gb = np.outer(av, g)
        else:
            ga = g @ bv.T
            gb = av.T @ g
        return ga, gb

    return _node(av @ bv, (a, b), bwd)


def gather_rows(mat, indices):
    """Row lookup mat[indices] (embedding gather)."""
    mat = _wrap(mat)
    idx = np.asarray(indices, dtype=np.intp)
    mv = mat.values

    def bwd(g):
        gm = np.zeros_like(mv)
        np.add.at(gm, idx, g)
        return (gm,)

    return _node(mv[idx], (mat,), bwd)


def take_along_rows(mat, indices):
    """out[i] = mat[i, indices[i]] for a 2-d mat."""
    mat = _wrap(mat)
    idx = np.asarray(indices, dtype=np.intp)
    mv = mat.values
    rows = np.arange(mv.shape[0])

    def bwd(g):
        gm = np.zeros_like(mv)
        gm[rows, idx] = g
        return (gm,)

    return _node(mv[rows, idx], (mat,), bwd)


def log_softmax(t):
    """Row-wise log-softmax of a 2-d tensor, max-shifted for stability."""
    t = _wrap(t)
    v = t.values
    shifted = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    out = shifted - lse

    def bwd(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _node(out, (t,), bwd)


def tsum(t):
    t = _wrap(t)
    v = t.values

    def bwd(g):
        return (np.full_like(v, float(g)),)

    return _node(np.sum(v), (t,), bwd)


def tmean(t):
    t = _wrap(t)
    n = t.values.size
    return tsum(t) / n


def sigmoid(t):
    t = _wrap(t)
    v = t.values
    out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))), np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def bwd(g):
        return (g * out * (1.0 - out),)

    return _node(out, (t,), bwd)


def log_sigmoid(t):
    t = _wrap(t)
    v = t.values
    out = np.minimum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))
    sig = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                   np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))

    def bwd(g):
        return (g * (1.0 - sig),)

    return _node(out, (t,), bwd)


def tlog(t):
    t = _wrap(t)
    v = t.values

    def bwd(g):
        return (g / v,)

    return _node(np.log(v), (t,), bwd)


def texp(t):
    t = _wrap(t)
    out = np.exp(t.values)

    def bwd(g):
        return (g * out,)

    return _node(out, (t,), bwd)


def concat_rows(tensors):
    """Stack 2-d tensors along axis 0."""
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.values.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(tensors)))

    return _node(np.concatenate([t.values for t in tensors], axis=0), tensors, bwd)


# ---------------------------------------------------------------------------
# backward pass and the finite-difference oracle


def _toposort(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss, params):
    """Reverse-mode gradients of a scalar loss.

    Returns a dict mapping each tensor in `params` to its gradient array.
    Parameters not reachable from the loss get a zero gradient. Also
    stores the gradient on each param's `.grad` slot.
    """
    if loss.values.size != 1:
        raise ValueError("backward requires a scalar loss")
    grads = {id(loss): np.ones_like(loss.values)}
    for node in reversed(_toposort(loss)):
        g = grads.get(id(node))
        if g is None or node._backward_fn is None:
            continue
        for parent, pg in zip(node._parents, node._backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    out = {}
    for p in params:
        out[p] = grads.get(id(p), np.zeros_like(p.values))
        p.grad = out[p]
    return out


def finite_diff(f, params, eps=1e-4):
    """Central-difference gradient oracle.

    `f` is a zero-argument callable returning a float and reading the
    current `.values` of the tensors in `params`; values are perturbed
    in place and restored. Independent of the backward pass by design.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    out = {}
    for p in params:
        grad = np.zeros_like(p.values)
        flat = p.values.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fplus = float(f())
            flat[i] = orig - eps
            fminus = float(f())
            flat[i] = orig
            gflat[i] = (fplus - fminus) / (2.0 * eps)
        out[p] = grad
    return out


def relative_error(a, b, floor=1e-8):
    """|a - b| / max(floor, |a|, |b|), elementwise, returned as max scalar.

    The default floor suits exact (backward-vs-backward) comparisons;
    comparisons against the finite-difference oracle need floor=1e-6,
    since central differences carry ~1e-12 absolute roundoff that would
    otherwise dominate at exactly-zero components.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))
