"""Dense float64 tensors with reverse-mode differentiation.

Every differentiable primitive builds a new :class:`Tensor` that remembers its
parents and a closure computing the parents' adjoints. :func:`backward` walks
the recorded graph in reverse topological order (the tape) and accumulates
gradients into every leaf that requires them.

Only the handful of primitives the fraud model needs are provided.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import scipy.sparse as sp

from .errors import ShapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64


class Tensor:
    """A dense array that can participate in gradient computation."""

    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), _op=""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = None
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __rtruediv__(self, other):
        return div(other, self)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, index):
        return take_rows(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


class Parameter(Tensor):
    """A trainable tensor carrying its own Adam moment buffers."""

    def __init__(self, data, name=""):
        super().__init__(np.array(data, dtype=DTYPE, copy=True), requires_grad=True)
        self.name = name
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, op):
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (), _op=op)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ----------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _result(a.data + b.data, (a, b), "add")

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    out._backward = _backward
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _result(a.data - b.data, (a, b), "sub")

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    out._backward = _backward
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _result(a.data * b.data, (a, b), "mul")

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    out._backward = _backward
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _result(a.data / b.data, (a, b), "div")

    def _backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    out._backward = _backward
    return out


def power(a, exponent):
    a = as_tensor(a)
    p = float(exponent)
    out = _result(a.data**p, (a,), "pow")

    def _backward(g):
        return (g * p * a.data ** (p - 1.0),)

    out._backward = _backward
    return out


def sqrt(a):
    a = as_tensor(a)
    y = np.sqrt(a.data)
    out = _result(y, (a,), "sqrt")
    out._backward = lambda g: (g * 0.5 / y,)
    return out


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    out = _result(y, (a,), "exp")
    out._backward = lambda g: (g * y,)
    return out


def log(a):
    a = as_tensor(a)
    out = _result(np.log(a.data), (a,), "log")
    out._backward = lambda g: (g / a.data,)
    return out


def clip(a, lo, hi):
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping was active."""
    a = as_tensor(a)
    inside = (a.data > lo) & (a.data < hi)
    out = _result(np.clip(a.data, lo, hi), (a,), "clip")
    out._backward = lambda g: (g * inside,)
    return out


def leaky_relu(x, slope=0.2):
    """Elementwise ``max(x, slope*x)``; the subgradient at 0 is ``slope``."""
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    x = as_tensor(x)
    pos = x.data > 0
    out = _result(np.where(pos, x.data, slope * x.data), (x,), "leaky_relu")
    out._backward = lambda g: (np.where(pos, g, slope * g),)
    return out


def _stable_sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x):
    x = as_tensor(x)
    y = _stable_sigmoid(np.atleast_1d(x.data)).reshape(x.shape)
    out = _result(y, (x,), "sigmoid")
    out._backward = lambda g: (g * y * (1.0 - y),)
    return out


# ------------------------------------------------------------------ reductions


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = _result(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum")

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    out._backward = _backward
    return out


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


# ------------------------------------------------------------------- structure


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = _result(a.data @ b.data, (a, b), "matmul")
    out._backward = lambda g: (g @ b.data.T, a.data.T @ g)
    return out


def reshape(a, shape):
    a = as_tensor(a)
    out = _result(a.data.reshape(shape), (a,), "reshape")
    out._backward = lambda g: (g.reshape(a.shape),)
    return out


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat")
    cuts = np.cumsum(sizes)[:-1]

    def _backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    out._backward = _backward
    return out


def take_rows(a, index):
    """Select rows (first-axis entries) by integer index array."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    out = _result(a.data[index], (a,), "take_rows")

    def _backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    out._backward = _backward
    return out


def batched_vecmat(v, mats):
    """Per-row vector-matrix product: ``out[n] = v[n] @ mats[n]``.

    ``v`` is ``[n, a]`` and ``mats`` is ``[n, a, b]``; the result is ``[n, b]``.
    """
    v, mats = as_tensor(v), as_tensor(mats)
    if mats.ndim != 3 or v.ndim != 2 or v.shape[0] != mats.shape[0] or v.shape[1] != mats.shape[1]:
        raise ShapeError(f"batched_vecmat: incompatible shapes {v.shape} and {mats.shape}")
    out = _result((v.data[:, None, :] @ mats.data)[:, 0, :], (v, mats), "batched_vecmat")

    def _backward(g):
        gv = (mats.data @ g[:, :, None])[:, :, 0]
        return gv, v.data[:, :, None] * g[:, None, :]

    out._backward = _backward
    return out


def segment_softmax(logits, segment_ids, n_segments=None):
    """Softmax of ``logits`` within each group sharing a segment id.

    Segments with no entries are simply absent from the output.
    """
    logits = as_tensor(logits)
    ids = np.asarray(segment_ids, dtype=np.int64)
    if logits.ndim != 1 or ids.shape != logits.shape:
        raise ShapeError(f"segment_softmax: logits {logits.shape} vs ids {ids.shape}")
    if n_segments is None:
        n_segments = int(ids.max()) + 1 if ids.size else 0
    seg_max = np.full(n_segments, -np.inf)
    np.maximum.at(seg_max, ids, logits.data)
    e = np.exp(logits.data - seg_max[ids])
    denom = np.bincount(ids, weights=e, minlength=n_segments)
    y = e / denom[ids]
    out = _result(y, (logits,), "segment_softmax")

    def _backward(g):
        dot = np.bincount(ids, weights=g * y, minlength=n_segments)
        return (y * (g - dot[ids]),)

    out._backward = _backward
    return out


def edge_aggregate(weights, x, targets, sources, n_targets):
    """Weighted neighbour sum: ``out[t] = sum_e weights[e] * x[sources[e]]`` over edges with target t."""
    weights, x = as_tensor(weights), as_tensor(x)
    targets = np.asarray(targets, dtype=np.int64)
    sources = np.asarray(sources, dtype=np.int64)
    if weights.shape != targets.shape or targets.shape != sources.shape:
        raise ShapeError(
            f"edge_aggregate: weights {weights.shape}, targets {targets.shape}, sources {sources.shape}"
        )
    order = None if np.all(targets[1:] >= targets[:-1]) else np.argsort(targets, kind="stable")
    t_sorted = targets if order is None else targets[order]
    contrib = weights.data[:, None] * x.data[sources]
    if order is not None:
        contrib = contrib[order]
    data = np.zeros((n_targets,) + x.shape[1:])
    if targets.size:
        # runs of equal targets are contiguous once sorted
        starts = np.flatnonzero(np.r_[True, t_sorted[1:] != t_sorted[:-1]])
        data[t_sorted[starts]] = np.add.reduceat(contrib, starts, axis=0)
    out = _result(data, (weights, x), "edge_aggregate")

    def _backward(g):
        gw = np.einsum("ed,ed->e", g[targets], x.data[sources])
        back = sp.csr_matrix((weights.data, (sources, targets)), shape=(x.shape[0], n_targets))
        gx = np.asarray(back @ g)
        return gw, gx

    out._backward = _backward
    return out


def dropout(x, rate, rng, training=True):
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not training or rate <= 0.0:
        return as_tensor(x)
    keep = (rng.random(as_tensor(x).shape) >= rate) / (1.0 - rate)
    return mul(x, keep)


# ------------------------------------------------------------- normalization


def graph_norm(x, gamma, beta, alpha, eps=1e-5):
    """GraphNorm over the node axis with learnable mean scale ``alpha``."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"graph_norm expects [n, d], got {x.shape}")
    centered = x - alpha * x.mean(axis=0, keepdims=True)
    var = (centered * centered).mean(axis=0, keepdims=True)
    return gamma * centered / sqrt(var + eps) + beta


# --------------------------------------------------------------------- tape


def _topological_order(root):
    order, seen = [], set()
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
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss):
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Leaf gradients accumulate across calls until reset (Adam zeroes them).
    """
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = _topological_order(loss)
    adjoints = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape):
        g = adjoints.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            adjoints[key] = pg if key not in adjoints else adjoints[key] + pg


# ------------------------------------------------------------------ training


def init_uniform(rng, shape, fan_in, name=""):
    bound = 1.0 / math.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape), name=name)


class Adam:
    """Bias-corrected Adam with optional L2 weight decay."""

    def __init__(self, params, lr=0.005, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay

    def step(self):
        return adam_step(
            self.params, self.lr, self.beta1, self.beta2, self.eps, self.weight_decay
        )

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """Apply one Adam update in place and clear gradients.

    Returns the number of parameters skipped because they had no gradient.
    """
    skipped = 0
    for p in params:
        if p.grad is None:
            skipped += 1
            continue
        g = p.grad
        if weight_decay:
            g = g + weight_decay * p.data
        p.step_count += 1
        t = p.step_count
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * g * g
        m_hat = p.adam_m / (1.0 - beta1**t)
        v_hat = p.adam_v / (1.0 - beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        p.grad = None
    if skipped:
        logger.warning("adam_step skipped %d parameter(s) without gradient", skipped)
    return skipped
