"""Differentiable kernels on :class:`~lgrnet.numkit.tensor.Tensor`.

Every function takes tensors (or array-likes) and returns a new tensor.
Backward rules are written by hand; each one is exercised by a central
finite-difference check in the test suite.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor, as_tensor, make_result

GN_EPS = 1e-5
LN_EPS = 1e-5


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- elementwise arithmetic -------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b),
                       lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return make_result(out, (a, b),
                       lambda g: (_unbroadcast(g / bd, ad.shape),
                                  _unbroadcast(-g * out / bd, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_result(-a.data, (a,), lambda g: (-g,))


def scale(a, k: float) -> Tensor:
    a = as_tensor(a)
    return make_result(a.data * k, (a,), lambda g: (g * k,))


# --- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes, leading axes broadcast.

    Accumulation is in float64.  Raises ``ValueError`` on mismatched inner
    extents.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with at least 2 axes")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return make_result(np.matmul(ad, bd), (a, b), backward)


# --- unary nonlinearities ---------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return make_result(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a) -> Tensor:
    """x * sigmoid(x)."""
    a = as_tensor(a)
    x = a.data
    s = _sigmoid(x)
    return make_result(x * s, (a,), lambda g: (g * (s + x * s * (1.0 - s)),))


def softplus(a) -> Tensor:
    """ln(1 + e^x); ``logaddexp`` keeps the large-x branch exactly linear."""
    a = as_tensor(a)
    x = a.data
    return make_result(np.logaddexp(0.0, x), (a,), lambda g: (g * _sigmoid(x),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return make_result(np.maximum(x, 0.0), (a,), lambda g: (g * (x > 0),))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return make_result(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


# --- reductions and shape ---------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result(np.transpose(a.data, axes).copy(), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return make_result(np.array(a.data[index]), (a,), backward)


def take(a, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis`` (``index_select`` generalised to any index array)."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        om = np.moveaxis(out, axis, 0)
        gm = np.moveaxis(g, tuple(range(axis, axis + idx.ndim)), tuple(range(idx.ndim)))
        np.add.at(om, idx, gm)
        return (out,)

    return make_result(np.take(a.data, idx, axis=axis), (a,), backward)


def index_add(length: int, indices, src) -> Tensor:
    """Scatter-add rows of ``src`` into a zero tensor of ``length`` rows."""
    src = as_tensor(src)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.zeros((length,) + src.shape[idx.ndim:])
    np.add.at(out, idx, src.data)
    return make_result(out, (src,), lambda g: (g[idx],))


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return make_result(np.concatenate([t.data for t in ts], axis=axis), tuple(ts),
                       lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    n = len(ts)
    return make_result(np.stack([t.data for t in ts], axis=axis), tuple(ts),
                       lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# --- normalised exponentials ------------------------------------------------

def softmax(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Softmax with max-subtraction.

    ``mask`` (boolean, broadcastable to ``a``) marks admissible entries;
    excluded entries get probability exactly zero.  Every slice along
    ``axis`` must keep at least one admissible entry.
    """
    a = as_tensor(a)
    if a.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    x = a.data
    if mask is None:
        z = x - x.max(axis=axis, keepdims=True)
        e = np.exp(z)
    else:
        mask = np.broadcast_to(mask, x.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax mask leaves an empty slice")
        xm = np.where(mask, x, -np.inf)
        z = x - xm.max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, z, 0.0)), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return make_result(y, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    x = a.data
    z = x - x.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(out)
    return make_result(out, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# --- convolution and normalisation -----------------------------------------

def conv1d_depthwise(x, kernel, padding: str = "same") -> Tensor:
    """Per-channel 1-D cross-correlation along the sequence axis.

    ``x`` is ``S x c``, ``kernel`` is ``K x c``.  ``padding="same"`` pads
    ``(K-1)/2`` zeros on both sides and needs odd ``K``; ``"causal"`` pads
    ``K-1`` zeros on the left so output ``s`` only sees inputs ``<= s``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 2 or kernel.ndim != 2 or x.shape[1] != kernel.shape[1]:
        raise ValueError(f"conv1d_depthwise shape mismatch: {x.shape} vs {kernel.shape}")
    S = x.shape[0]
    K = kernel.shape[0]
    if padding == "same":
        if K % 2 == 0:
            raise ValueError(f"'same' padding needs an odd kernel, got K={K}")
        left = right = (K - 1) // 2
    elif padding == "causal":
        left, right = K - 1, 0
    else:
        raise ValueError(f"unknown padding {padding!r}")
    xp = np.pad(x.data, ((left, right), (0, 0)))
    w = kernel.data
    out = np.zeros_like(x.data)
    for k in range(K):
        out += w[k] * xp[k:k + S]

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.empty_like(w)
        for k in range(K):
            gxp[k:k + S] += w[k] * g
            gw[k] = (xp[k:k + S] * g).sum(axis=0)
        return gxp[left:left + S], gw

    return make_result(out, (x, kernel), backward)


def _normalize(x: np.ndarray, axes: tuple[int, ...], eps: float):
    mu = x.mean(axis=axes, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return (x - mu) * inv, inv


def _normalize_backward(g: np.ndarray, xhat: np.ndarray, inv: np.ndarray, axes) -> np.ndarray:
    return inv * (g - g.mean(axis=axes, keepdims=True)
                  - xhat * (g * xhat).mean(axis=axes, keepdims=True))


def group_norm(x, groups: int, weight=None, bias=None, eps: float = GN_EPS) -> Tensor:
    """GroupNorm over ``(..., N, c)``: statistics per group of ``c/groups``
    channels across the ``N`` positions, then optional per-channel affine."""
    x = as_tensor(x)
    c = x.shape[-1]
    if groups < 1 or c % groups:
        raise ValueError(f"{c} channels not divisible into {groups} groups")
    lead = x.shape[:-1]
    xg = x.data.reshape(lead + (groups, c // groups))
    axes = (-3, -1)
    xhat, inv = _normalize(xg, axes, eps)
    xhat_flat = xhat.reshape(x.shape)
    inputs = [x]
    out = xhat_flat
    w = b = None
    if weight is not None:
        w = as_tensor(weight)
        inputs.append(w)
        out = out * w.data
    if bias is not None:
        b = as_tensor(bias)
        inputs.append(b)
        out = out + b.data

    def backward(g):
        grads = []
        gx = g * w.data if w is not None else g
        gx = _normalize_backward(gx.reshape(xg.shape), xhat, inv, axes).reshape(x.shape)
        grads.append(gx)
        red = tuple(range(g.ndim - 1))
        if w is not None:
            grads.append((g * xhat_flat).sum(axis=red))
        if b is not None:
            grads.append(g.sum(axis=red))
        return grads

    return make_result(out, tuple(inputs), backward)


def layer_norm(x, weight=None, bias=None, eps: float = LN_EPS) -> Tensor:
    """Normalise over the last axis, then optional per-channel affine."""
    x = as_tensor(x)
    xhat, inv = _normalize(x.data, (-1,), eps)
    inputs = [x]
    out = xhat
    w = b = None
    if weight is not None:
        w = as_tensor(weight)
        inputs.append(w)
        out = out * w.data
    if bias is not None:
        b = as_tensor(bias)
        inputs.append(b)
        out = out + b.data

    def backward(g):
        gx = g * w.data if w is not None else g
        grads = [_normalize_backward(gx, xhat, inv, (-1,))]
        red = tuple(range(g.ndim - 1))
        if w is not None:
            grads.append((g * xhat).sum(axis=red))
        if b is not None:
            grads.append(g.sum(axis=red))
        return grads

    return make_result(out, tuple(inputs), backward)
