"""Minimal reverse-mode automatic differentiation on numpy arrays.

A `Tensor` wraps an ndarray plus an optional gradient and a closure that
propagates incoming gradients to its parents. `backward()` on a scalar loss
topologically sorts the graph, runs the closures in reverse order, and then
frees the graph (closures and parent links are dropped so intermediates can
be collected; gradients accumulate across fan-out).

Ops keep the dtype of their inputs: float64 for gradient checks, float32
for training. Reductions use fixed orders, so identical seeds give
bit-identical trajectories. Batched matmuls loop 2-D BLAS calls into a
preallocated output, which is the fastest route on this substrate.

The one non-standard primitive is `decay_softmax`: a causally masked
softmax over attention logits with an additive pairwise decay bias
bias[i, j] = c[i] - c[j] built from per-position cumulative log-gate values
c. Fusing mask, bias, and softmax keeps the (L x L) intermediate count down;
`tests/test_autodiff.py` checks it against the composed-op route.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class Tensor:
    """An ndarray with an optional grad and a backward closure."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._parents = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accumulate(self, g, own: bool = False):
        """Add a gradient contribution.

        own=True promises g is a fresh array the caller will not reuse,
        so the first contribution can be stored without copying.  Never
        set it for the incoming upstream gradient or a view of it.
        """
        if self.grad is None:
            g = np.asarray(g, dtype=self.data.dtype)
            if g.shape != self.data.shape:
                g = np.broadcast_to(g, self.data.shape)
                own = False
            self.grad = g if own else g.copy()
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; frees the graph afterwards."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        visited = set()
        stack = [(self, iter(self._parents))]
        visited.add(id(self))
        while stack:
            node, parents = stack[-1]
            advanced = False
            for p in parents:
                if id(p) not in visited:
                    visited.add(id(p))
                    stack.append((p, iter(p._parents)))
                    advanced = True
                    break
            if not advanced:
                topo.append(node)
                stack.pop()
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            node._backward = None
            node._parents = ()

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


_grad_enabled = [True]


@contextmanager
def no_grad():
    """Skip graph construction inside the block (inference paths)."""
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled[-1] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axes, keepdims=True)
    return g


def _bmm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with leading batch dims; loops 2-D BLAS for batches."""
    if a.ndim == 2 and b.ndim == 2:
        return np.dot(a, b)
    if b.ndim == 2:
        return np.dot(a.reshape(-1, a.shape[-1]), b).reshape(*a.shape[:-1], b.shape[-1])
    if a.shape[:-2] != b.shape[:-2]:
        raise ValueError(f"matmul: batch dims differ, {a.shape} vs {b.shape}")
    return np.matmul(a, b)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data - b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape), own=True)

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape), own=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape), own=True)

    return _make(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape), own=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out_data / b.data, b.shape), own=True)

    return _make(out_data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out_data = _bmm(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_bmm(g, b.data.swapaxes(-1, -2)), own=True)
        if b.requires_grad:
            if b.data.ndim == 2:
                ga = a.data.reshape(-1, a.data.shape[-1])
                gb = np.dot(ga.T, g.reshape(-1, g.shape[-1]))
            else:
                gb = _bmm(a.data.swapaxes(-1, -2), g)
            b._accumulate(gb, own=True)

    return _make(out_data, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def relu(x) -> Tensor:
    x = _wrap(x)
    out_data = np.maximum(x.data, 0)

    def backward(g):
        x._accumulate(g * (x.data > 0), own=True)

    return _make(out_data, (x,), backward)


def tanh(x) -> Tensor:
    x = _wrap(x)
    out_data = np.tanh(x.data)

    def backward(g):
        x._accumulate(g * (1.0 - out_data * out_data), own=True)

    return _make(out_data, (x,), backward)


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    out_data = np.empty_like(x.data)
    pos = x.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    out_data[~pos] = ex / (1.0 + ex)

    def backward(g):
        x._accumulate(g * out_data * (1.0 - out_data), own=True)

    return _make(out_data, (x,), backward)


def exp(x) -> Tensor:
    x = _wrap(x)
    out_data = np.exp(x.data)

    def backward(g):
        x._accumulate(g * out_data, own=True)

    return _make(out_data, (x,), backward)


def log(x) -> Tensor:
    x = _wrap(x)
    out_data = np.log(x.data)

    def backward(g):
        x._accumulate(g / x.data, own=True)

    return _make(out_data, (x,), backward)


def logsigmoid(x) -> Tensor:
    """log(sigmoid(x)), computed stably."""
    x = _wrap(x)
    out_data = np.where(x.data >= 0,
                        -np.log1p(np.exp(-np.abs(x.data))),
                        x.data - np.log1p(np.exp(-np.abs(x.data))))

    def backward(g):
        sig = np.where(x.data >= 0,
                       1.0 / (1.0 + np.exp(-np.abs(x.data))),
                       np.exp(x.data - np.log1p(np.exp(-np.abs(x.data)))))
        x._accumulate(g * (1.0 - sig), own=True)

    return _make(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    out_data = x.data.reshape(shape)

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return _make(out_data, (x,), backward)


def transpose(x, axes) -> Tensor:
    x = _wrap(x)
    out_data = np.transpose(x.data, axes)
    inverse = np.argsort(axes)

    def backward(g):
        x._accumulate(np.transpose(g, inverse))

    return _make(out_data, (x,), backward)


def reverse(x, axis: int) -> Tensor:
    """Flip a sequence along one axis."""
    x = _wrap(x)
    out_data = np.flip(x.data, axis).copy()

    def backward(g):
        x._accumulate(np.flip(g, axis))

    return _make(out_data, (x,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes[:-1])

    def backward(g):
        parts = np.split(g, splits, axis)
        for t, part in zip(tensors, parts):
            if t.requires_grad:
                t._accumulate(part)

    return _make(out_data, tuple(tensors), backward)


def repeat_heads(x, times: int) -> Tensor:
    """Repeat axis 1 entries in place: (B, H, ...) -> (B, H*times, ...).

    Used by grouped-query attention, where each k/v head serves `times`
    contiguous query heads.
    """
    x = _wrap(x)
    out_data = np.repeat(x.data, times, axis=1)

    def backward(g):
        shape = (g.shape[0], x.shape[1], times) + g.shape[2:]
        x._accumulate(g.reshape(shape).sum(2), own=True)

    return _make(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# reductions and indexing


def sum_(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    out_data = x.data.sum(axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            x._accumulate(np.broadcast_to(g, x.shape).copy(), own=True)
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape).copy(), own=True)

    return _make(out_data, (x,), backward)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    count = x.data.size if axis is None else x.data.shape[axis]
    return mul(sum_(x, axis, keepdims), 1.0 / count)


def cumsum(x, axis: int) -> Tensor:
    x = _wrap(x)
    out_data = np.cumsum(x.data, axis)

    def backward(g):
        rev = np.flip(g, axis)
        x._accumulate(np.flip(np.cumsum(rev, axis), axis), own=True)

    return _make(out_data, (x,), backward)


def _segment_add(grad: np.ndarray, idx: np.ndarray, g: np.ndarray) -> None:
    """grad[idx[i]] += g[i] with duplicate indices, deterministically."""
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    gs = g[order]
    starts = np.concatenate([[0], np.nonzero(np.diff(sorted_idx))[0] + 1])
    sums = np.add.reduceat(gs, starts, axis=0)
    grad[sorted_idx[starts]] += sums


def gather_rows(table, idx) -> Tensor:
    """Row lookup: out[..., :] = table[idx[...], :]."""
    table = _wrap(table)
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ValueError("gather index out of range")
    out_data = table.data[idx]

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        _segment_add(table.grad, idx.ravel(), g.reshape(-1, table.shape[-1]))

    return _make(out_data, (table,), backward)


def masked_select_rows(x, mask) -> Tensor:
    """Select positions where mask (over leading dims) is true: (M, D) rows."""
    x = _wrap(x)
    mask = np.asarray(mask, bool)
    if mask.shape != x.shape[:-1]:
        raise ValueError(f"mask shape {mask.shape} must match leading dims of {x.shape}")
    out_data = x.data[mask]

    def backward(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[mask] += g

    return _make(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# normalization


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis with learned gain and bias."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    mu = x.data.mean(-1, keepdims=True)
    var = x.data.var(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, x.shape[-1]).sum(0), own=True)
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, x.shape[-1]).sum(0), own=True)
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(-1, keepdims=True)
            m2 = (dxhat * xhat).mean(-1, keepdims=True)
            x._accumulate((dxhat - m1 - xhat * m2) * inv, own=True)

    return _make(out_data, (x, gain, bias), backward)


def group_norm(x, gain, bias, groups: int, eps: float = 1e-5) -> Tensor:
    """Normalize each contiguous channel group of the last axis per position."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    c = x.shape[-1]
    if c % groups:
        raise ValueError(f"channels {c} not divisible by groups {groups}")
    gshape = x.shape[:-1] + (groups, c // groups)
    xg = x.data.reshape(gshape)
    mu = xg.mean(-1, keepdims=True)
    var = xg.var(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(x.shape)
    out_data = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, c).sum(0), own=True)
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, c).sum(0), own=True)
        if x.requires_grad:
            dxhat = (g * gain.data).reshape(gshape)
            xhat_g = xhat.reshape(gshape)
            m1 = dxhat.mean(-1, keepdims=True)
            m2 = (dxhat * xhat_g).mean(-1, keepdims=True)
            x._accumulate(((dxhat - m1 - xhat_g * m2) * inv).reshape(x.shape), own=True)

    return _make(out_data, (x, gain, bias), backward)


# ---------------------------------------------------------------------------
# softmax family


def softmax(x) -> Tensor:
    """Stable softmax over the last axis."""
    x = _wrap(x)
    z = x.data - x.data.max(-1, keepdims=True)
    e = np.exp(z)
    out_data = e / e.sum(-1, keepdims=True)

    def backward(g):
        gy = g * out_data
        x._accumulate(gy - out_data * gy.sum(-1, keepdims=True), own=True)

    return _make(out_data, (x,), backward)


_MASK_CACHE: dict = {}


def _causal_mask(L: int, dtype) -> np.ndarray:
    key = (L, np.dtype(dtype).str)
    m = _MASK_CACHE.get(key)
    if m is None:
        m = np.triu(np.full((L, L), -1e30, dtype), k=1)
        _MASK_CACHE[key] = m
    return m


def decay_softmax(scores, c) -> Tensor:
    """Causal softmax of scores[..., i, j] + c[..., i] - c[..., j].

    `c` holds cumulative log forget-gate values, so the additive bias is the
    total log decay applied between positions j and i; entries with j > i
    are masked out. Fused forward/backward to avoid materializing the bias.
    """
    scores, c = _wrap(scores), _wrap(c)
    L = scores.shape[-1]
    if scores.shape[-2] != L or c.shape != scores.shape[:-1]:
        raise ValueError(f"decay_softmax: shapes {scores.shape} and {c.shape} disagree")
    z = scores.data + c.data[..., :, None]
    z -= c.data[..., None, :]
    z += _causal_mask(L, z.dtype)
    z -= z.max(-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(-1, keepdims=True)
    out_data = z

    def backward(g):
        gz = g * out_data
        gz -= out_data * gz.sum(-1, keepdims=True)
        if scores.requires_grad:
            scores._accumulate(gz, own=True)
        if c.requires_grad:
            c._accumulate(gz.sum(-1) - gz.sum(-2), own=True)

    return _make(out_data, (scores, c), backward)


# ---------------------------------------------------------------------------
# convolution and pooling


def depthwise_conv1d(x, w, b, multiplier: int) -> Tensor:
    """Depthwise conv along the sequence: kernel 3, stride 1, zero padding 1.

    x: (B, L, C_in); w: (C_in * multiplier, 3); b: (C_in * multiplier,).
    Output channel c_in * multiplier + j comes from input channel c_in only.
    """
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    B, L, cin = x.shape
    cout = cin * multiplier
    if w.shape != (cout, 3) or b.shape != (cout,):
        raise ValueError(f"depthwise_conv1d: weight {w.shape} / bias {b.shape} "
                         f"do not match {cin} channels x {multiplier}")
    w3 = w.data.reshape(cin, multiplier, 3)
    xpad = np.zeros((B, L + 2, cin), x.dtype)
    xpad[:, 1:L + 1] = x.data
    acc = np.zeros((B, L, cin, multiplier), x.dtype)
    for k in range(3):
        acc += xpad[:, k:k + L, :, None] * w3[None, None, :, :, k]
    out_data = acc.reshape(B, L, cout) + b.data

    def backward(g):
        g4 = g.reshape(B, L, cin, multiplier)
        if b.requires_grad:
            b._accumulate(g.reshape(-1, cout).sum(0), own=True)
        if w.requires_grad:
            gw = np.empty((cin, multiplier, 3), w.dtype)
            for k in range(3):
                gw[:, :, k] = (xpad[:, k:k + L, :, None] * g4).sum((0, 1))
            w._accumulate(gw.reshape(cout, 3), own=True)
        if x.requires_grad:
            gxpad = np.zeros((B, L + 2, cin), x.dtype)
            for k in range(3):
                gxpad[:, k:k + L] += (g4 * w3[None, None, :, :, k]).sum(-1)
            x._accumulate(gxpad[:, 1:L + 1], own=True)

    return _make(out_data, (x, w, b), backward)


def avg_pool_seq(x) -> Tensor:
    """Non-overlapping window-2 average over axis 1; odd tails stay singletons."""
    x = _wrap(x)
    B, L = x.shape[0], x.shape[1]
    half = L // 2
    pairs = (x.data[:, 0:2 * half:2] + x.data[:, 1:2 * half:2]) * 0.5
    if L % 2:
        out_data = np.concatenate([pairs, x.data[:, -1:]], 1)
    else:
        out_data = pairs

    def backward(g):
        gx = np.empty_like(x.data)
        gp = g[:, :half]
        gx[:, 0:2 * half:2] = gp * 0.5
        gx[:, 1:2 * half:2] = gp * 0.5
        if L % 2:
            gx[:, -1] = g[:, -1]
        x._accumulate(gx, own=True)

    return _make(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# losses


def mse(pred, target) -> Tensor:
    """Mean squared error over all elements."""
    pred, target = _wrap(pred), _wrap(target)
    if pred.shape != target.shape:
        raise ValueError(f"mse: shapes differ, {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out_data = np.asarray((diff * diff).mean(), pred.dtype)

    def backward(g):
        scale = 2.0 / diff.size
        if pred.requires_grad:
            pred._accumulate(g * scale * diff, own=True)
        if target.requires_grad:
            target._accumulate(-g * scale * diff, own=True)

    return _make(out_data, (pred, target), backward)


def cross_entropy(logits, labels, smoothing: float = 0.0) -> Tensor:
    """Label-smoothed cross entropy, averaged over the batch.

    The smoothing mass is spread uniformly over all classes:
    q = (1 - smoothing) * onehot + smoothing / C.
    """
    logits = _wrap(logits)
    labels = np.asarray(labels)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {B}")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise ValueError("label out of range")
    if not 0.0 <= smoothing < 1.0:
        raise ValueError("smoothing must lie in [0, 1)")
    z = logits.data - logits.data.max(-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
    q = np.full((B, C), smoothing / C, logits.dtype)
    q[np.arange(B), labels] += 1.0 - smoothing
    out_data = np.asarray(-(q * logp).sum() / B, logits.dtype)

    def backward(g):
        p = np.exp(logp)
        logits._accumulate(g * (p - q) / B, own=True)

    return _make(out_data, (logits,), backward)
