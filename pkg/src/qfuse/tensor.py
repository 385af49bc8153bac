"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array. Operations in this module build a
graph of closures when any input requires a gradient; :func:`backward`
walks that graph in reverse topological order and accumulates gradients
into the leaf tensors.

Precision follows the data: float32 for training, float64 for gradient
checks. Nothing here touches process-wide state except the thread-local
``no_grad`` flag.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from qfuse import kernels


class DimensionError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ContractError(RuntimeError):
    """A precondition on the call sequence was violated."""


_state = threading.local()


def grad_enabled():
    return getattr(_state, "enabled", True)


class NonFiniteError(FloatingPointError):
    """A forward value or gradient contained NaN or Inf while checking was on."""


_check_finite = False


def set_finite_check(enabled):
    """Turn on (or off) a NaN/Inf assertion on every op output and gradient."""
    global _check_finite
    prev, _check_finite = _check_finite, bool(enabled)
    return prev


def _assert_finite(arr, what):
    # a NaN or inf anywhere makes the sum non-finite; the sum allocates nothing, and
    # the elementwise test only runs to rule out overflow of an all-finite sum
    if not np.isfinite(np.sum(arr)) and not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {what}")


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

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

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # arithmetic sugar used by the losses and the Q-learning update
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """A trainable tensor with its AdaGrad accumulator."""

    __slots__ = ("name", "accumulator")

    def __init__(self, data, name="", dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name
        self.accumulator = np.zeros_like(self.data)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def _as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype or np.float32))


def _make(data, parents, backward):
    if _check_finite:
        _assert_finite(data, "forward output")
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        # requires_grad is captured now; toggling it later does not rewrite the graph
        out._parents = tuple(p if p.requires_grad else None for p in parents)
        out._backward = backward
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b, a.dtype)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw)


def mul(a, b):
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bw)


def scale(a, c):
    return _make(a.data * a.dtype.type(c), (a,), lambda g: (g * a.dtype.type(c),))


def square(a):
    return _make(a.data * a.data, (a,), lambda g: (2 * a.data * g,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def clip(a, lo, hi):
    out = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)
    return _make(out, (a,), lambda g: (g * mask,))


def relu(a):
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1 - out * out),))


def sigmoid(a):
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
    return _make(out, (a,), lambda g: (g * out * (1 - out),))


_ACTIVATIONS = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}


def activation(a, kind):
    try:
        return _ACTIVATIONS[kind](a)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


# ---------------------------------------------------------------- reductions / shape


def sum_all(a):
    return _make(np.asarray(a.data.sum(), dtype=a.dtype), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean(a):
    n = a.size
    return _make(
        np.asarray(a.data.mean(), dtype=a.dtype),
        (a,),
        lambda g: (np.full(a.shape, g / n, dtype=a.dtype),),
    )


def reshape(a, shape):
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def flatten(a):
    return reshape(a, (a.shape[0], -1))


def concat(tensors, axis=1):
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, bw)


def gather_rows(a, index):
    """Pick ``a[i, index[i]]`` for every row of a 2-D tensor."""
    index = np.asarray(index, dtype=np.intp)
    rows = np.arange(a.shape[0])

    def bw(g):
        full = np.zeros_like(a.data)
        full[rows, index] = g
        return (full,)

    return _make(a.data[rows, index], (a,), bw)


def matmul_const(a, m):
    """``a @ m`` along the last axis for a constant matrix ``m`` (resizing)."""
    m = np.asarray(m, dtype=a.dtype)
    return _make(a.data @ m, (a,), lambda g: (g @ m.T,))


# ---------------------------------------------------------------- layers


def dense(x, weights, bias):
    if x.data.ndim != 2 or x.shape[1] != weights.shape[0] or weights.shape[1:] != bias.shape:
        raise DimensionError(f"dense: input {x.shape}, weights {weights.shape}, bias {bias.shape}")
    out = x.data @ weights.data + bias.data
    need_x, need_w = x.requires_grad, weights.requires_grad

    def bw(g):
        dx = g @ weights.data.T if need_x else None
        if not need_w:
            return dx, None, None
        return dx, x.data.T @ g, g.sum(axis=0)

    return _make(out, (x, weights, bias), bw)


def conv_output_size(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


def conv2d(x, weights, bias, stride=1, pad=0):
    """2-D cross-correlation of ``x`` [N,C,H,W] with ``weights`` [K,C,kh,kw]."""
    if x.data.ndim != 4 or weights.data.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D operands, got {x.shape} and {weights.shape}")
    n, c, h, w = x.shape
    k, wc, kh, kw = weights.shape
    if wc != c:
        raise DimensionError(f"conv2d: input has {c} channels, weights expect {wc}")
    if bias.shape != (k,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({k},)")
    if stride < 1 or pad < 0 or kh > h + 2 * pad or kw > w + 2 * pad:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} does not fit {h}x{w} with pad {pad}")
    ho, wo = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    cols = kernels.im2col(xp, kh, kw, stride, ho, wo)  # [C*kh*kw, N*Ho*Wo]
    wmat = weights.data.reshape(k, -1)
    out = wmat @ cols
    out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(k, n, ho, wo).transpose(1, 0, 2, 3))
    need_x, need_w = x.requires_grad, weights.requires_grad

    def bw(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(k, -1)
        if not need_w:
            dw = db = None
        else:
            dw = (gm @ cols.T).reshape(weights.shape)
            db = gm.sum(axis=1)
        if not need_x:
            return None, dw, db
        dcols = (wmat.T @ gm).reshape(c, kh, kw, n, ho, wo)
        dxp = kernels.col2im(dcols, h + 2 * pad, w + 2 * pad, stride)
        dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
        return dx, dw, db

    return _make(out, (x, weights, bias), bw)


def max_pool2d(x, k=2, stride=2):
    if (k, stride) != (2, 2):
        raise ValueError("only 2x2 pooling with stride 2 is supported")
    if x.data.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise DimensionError(f"max_pool2d needs even spatial extents, got {x.shape}")
    out, arg = kernels.maxpool2x2_forward(x.data)
    return _make(out, (x,), lambda g: (kernels.maxpool2x2_backward(g, arg),))


def upsample2x(x):
    if x.data.ndim != 4:
        raise DimensionError(f"upsample2x expects [N,C,H,W], got {x.shape}")
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    n, c, h, w = x.shape

    def bw(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _make(out, (x,), bw)


def resize_matrix(src, dst, dtype=np.float64):
    """Bilinear (half-pixel centre) interpolation matrix of shape [dst, src]."""
    m = np.zeros((dst, src), dtype=np.float64)
    if src == dst:
        np.fill_diagonal(m, 1.0)
        return m.astype(dtype)
    pos = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    pos = np.clip(pos, 0, src - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = pos - lo
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1 - frac)
    np.add.at(m, (rows, hi), frac)
    return m.astype(dtype)


def resize_bilinear(x, size):
    """Resize the last two axes of ``x`` to ``size`` (int or (h, w))."""
    oh, ow = (size, size) if isinstance(size, int) else size
    h, w = x.shape[-2:]
    if (oh, ow) == (h, w):
        return x
    rh = resize_matrix(h, oh)
    rw = resize_matrix(w, ow)
    t = matmul_const(x, rw.T)  # [..., h, ow]
    t = _swap_last(t)  # [..., ow, h]
    t = matmul_const(t, rh.T)  # [..., ow, oh]
    return _swap_last(t)


def _swap_last(a):
    return _make(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


# ---------------------------------------------------------------- losses

PROB_EPS = 1e-7


def mse_loss(pred, target):
    target = _as_tensor(target, pred.dtype)
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray(np.mean(diff * diff), dtype=pred.dtype)

    def bw(g):
        d = (2.0 / n) * g * diff
        return d, -d

    return _make(out, (pred, target), bw)


def bce_loss(prob, label):
    """Mean of ``-ln p`` (label 1) or ``-ln(1-p)`` (label 0); probabilities clamped."""
    prob = _as_tensor(prob)
    p = clip(prob, PROB_EPS, 1 - PROB_EPS)
    if label == 1:
        return scale(mean(log(p)), -1.0)
    if label == 0:
        return scale(mean(log(scale(p, -1.0) + 1.0)), -1.0)
    raise ValueError(f"label must be 0 or 1, got {label!r}")


# ---------------------------------------------------------------- backward


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
            if p is not None and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf tensor."""
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for node in reversed(_toposort(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # gradients are never modified in place, so a leaf may keep the array it was handed
            g = np.asarray(g, dtype=node.dtype).reshape(node.shape)
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if parent is None or pg is None:
                continue
            if _check_finite:
                _assert_finite(pg, "gradient")
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


def zero_grads(params):
    for p in params:
        p.grad = None
