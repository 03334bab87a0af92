"""Differentiable operations.

Every function takes :class:`Tensor` (or array-like) inputs and returns a
new Tensor.  When a tape is active and any input requires gradients the
operation is recorded together with its vector-Jacobian product.
"""
import math

import numpy as np

from ..errors import ContractError, DimensionError
from . import kernels
from .tensor import Tensor, active_tape, as_tensor

_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)
_GELU_C = math.sqrt(2.0 / math.pi)


def _emit(data, inputs, vjp, op):
    tape = active_tape()
    if tape is not None:
        for t in inputs:
            if t.requires_grad:
                out = Tensor(data, requires_grad=True)
                tape.record(out, inputs, vjp, op)
                return out
    return Tensor(data)


def unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a} and {b}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b),
                 lambda g: (unbroadcast(g, sa), unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b),
                 lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data
    return _emit(ad * bd, (a, b),
                 lambda g: (unbroadcast(g * bd, ad.shape), unbroadcast(g * ad, bd.shape)), "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        return unbroadcast(g / bd, ad.shape), unbroadcast(-g * out / bd, bd.shape)

    return _emit(out, (a, b), vjp, "div")


def sigmoid(x):
    """Elementwise logistic function, clamped to the open interval (0, 1)."""
    x = as_tensor(x)
    xd = x.data
    pos = xd >= 0
    z = np.exp(-np.abs(xd))
    y = np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))
    y = np.clip(y, _SIG_LO, _SIG_HI)
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x):
    x = as_tensor(x)
    xd = x.data
    return _emit(np.maximum(xd, 0.0), (x,), lambda g: (g * (xd > 0),), "relu")


def gelu(x):
    """GELU, tanh approximation (smooth everywhere)."""
    x = as_tensor(x)
    xd = x.data
    x2 = xd * xd
    t = np.tanh(xd * (_GELU_C + _GELU_C * 0.044715 * x2))
    y = 0.5 * xd * (1.0 + t)

    def vjp(g):
        du = _GELU_C + (3 * _GELU_C * 0.044715) * x2
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * du),)

    return _emit(y, (x,), vjp, "gelu")


def sqrt(x):
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise ContractError("sqrt of negative value")
    y = np.sqrt(x.data)

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(y > 0, 0.5 / y, 0.0)
        return (g * d,)

    return _emit(y, (x,), vjp, "sqrt")


def square(x):
    x = as_tensor(x)
    xd = x.data
    return _emit(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


# ------------------------------------------------------------------ reductions

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    shape = x.shape
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit(out, (x,), vjp, "sum")


def mean(x, axis=None, keepdims=False):
    """Mean along ``axis`` (the sequence mean-pool when axis is the post axis)."""
    x = as_tensor(x)
    shape = x.shape
    axes = _norm_axis(axis, x.ndim)
    count = 1
    for a in axes:
        count *= shape[a]
    out = x.data.sum(axis=axes, keepdims=keepdims) / count

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape).copy(),)

    return _emit(out, (x,), vjp, "mean")


def masked_mean(x, mask, axis):
    """Mean of ``x`` over ``axis`` counting only positions where ``mask`` is 1.

    ``mask`` is a constant array broadcastable to ``x`` with the reduced axis
    present.  Every slice must contain at least one unmasked position.
    """
    x = as_tensor(x)
    m = np.asarray(mask, dtype=np.float64)
    count = m.sum(axis=axis, keepdims=True)
    if np.any(count == 0):
        raise ContractError("masked_mean over a slice with no unmasked positions")
    w = np.broadcast_to(m / count, x.shape)
    out = (x.data * w).sum(axis=axis)

    def vjp(g):
        return (np.expand_dims(g, axis) * w,)

    return _emit(out, (x,), vjp, "masked_mean")


def norm_lastdim(x):
    """Euclidean norm along the last dimension."""
    x = as_tensor(x)
    xd = x.data
    n = np.sqrt((xd * xd).sum(axis=-1))

    def vjp(g):
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(n > 0, g / n, 0.0)
        return (xd * scale[..., None],)

    return _emit(n, (x,), vjp, "norm")


# ---------------------------------------------------------------- shape ops

def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from None
    return _emit(out, (x,), lambda g: (g.reshape(old),), "reshape")


def flatten(x, start_dim=0):
    x = as_tensor(x)
    start = start_dim % x.ndim if x.ndim else 0
    return reshape(x, x.shape[:start] + (-1,))


def transpose(x, axes=None):
    """Permute axes; default swaps the last two."""
    x = as_tensor(x)
    if axes is None:
        if x.ndim < 2:
            raise DimensionError(f"transpose needs at least 2 dims, got {x.shape}")
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _emit(np.ascontiguousarray(x.data.transpose(axes)), (x,),
                 lambda g: (g.transpose(inv),), "transpose")


def concat(tensors, axis=-1):
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ContractError("concat of an empty list")
    nd = ts[0].ndim
    ax = axis % nd
    for t in ts[1:]:
        if t.ndim != nd or any(t.shape[i] != ts[0].shape[i] for i in range(nd) if i != ax):
            raise DimensionError(
                f"concat: shapes {[tt.shape for tt in ts]} differ off axis {axis}")
    sizes = [t.shape[ax] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in ts], axis=ax)
    return _emit(out, tuple(ts), lambda g: tuple(np.split(g, cuts, axis=ax)), "concat")


def index(x, key):
    """Basic (slice / integer) indexing; the adjoint scatters into zeros."""
    x = as_tensor(x)
    if not isinstance(key, tuple):
        key = (key,)
    for k in key:
        if not isinstance(k, (int, np.integer, slice)):
            raise ContractError("index supports integers and slices only")
    out = x.data[key]
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        full[key] = g
        return (full,)

    return _emit(np.ascontiguousarray(out), (x,), vjp, "index")


# ------------------------------------------------------------------ linear algebra

def matmul(a, b):
    """Batched matrix product with broadcast-from-1 batch extents."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ for {a.shape} and {b.shape}")
    _broadcast_shape(a.shape[:-2], b.shape[:-2], "matmul")
    ad, bd = a.data, b.data
    out = ad @ bd

    def vjp(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _emit(out, (a, b), vjp, "matmul")


def linear(x, w, b=None):
    """``x @ w + b`` broadcast over the leading dims of ``x``."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.ndim < 1 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {w.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise DimensionError(f"linear: bias {b.shape} does not match weight {w.shape}")
    xd, wd = x.data, w.data
    x2 = xd.reshape(-1, wd.shape[0])
    out2 = x2 @ wd
    if b is not None:
        out2 = out2 + b.data
    out = out2.reshape(xd.shape[:-1] + (wd.shape[1],))

    def vjp(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape)
        gw = x2.T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return _emit(out, inputs, vjp, "linear")


def softmax_lastdim(x):
    """Softmax over the last axis, with max subtraction."""
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"softmax over empty last dimension: {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _emit(y, (x,), vjp, "softmax")


def layer_norm(x, gain, bias, eps=1e-5):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs input {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        lead = tuple(range(g.ndim - 1))
        gg = g * gain.data
        gx = inv * (gg - gg.mean(axis=-1, keepdims=True)
                    - xhat * (gg * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _emit(out, (x, gain, bias), vjp, "layer_norm")


def embedding(ids, table):
    """Row lookup ``table[ids]``; ``ids`` is an integer array (not differentiated)."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (not np.issubdtype(ids.dtype, np.integer)):
        raise ContractError("embedding ids must be integers")
    vocab = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ContractError(f"embedding id out of range [0, {vocab})")
    out = table.data[ids]

    def vjp(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _emit(out, (table,), vjp, "embedding")


def dropout(x, rate, rng=None, training=True):
    """Inverted dropout.  Identity when not training or ``rate == 0``.

    ``rng`` may be a ``numpy.random.Generator`` or an integer seed; the
    same seed yields the same mask bit-for-bit.
    """
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _emit(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ------------------------------------------------------------------ convolution

def _lead_flatten(x, core):
    lead = x.shape[:x.ndim - core]
    n = int(np.prod(lead)) if lead else 1
    return lead, np.ascontiguousarray(x.data.reshape((n,) + x.shape[x.ndim - core:]))


def conv1d(x, kernels_, stride=1):
    """Valid cross-correlation of ``x[..., C, L]`` with ``kernels[O, C, K]``."""
    x, w = as_tensor(x), as_tensor(kernels_)
    if x.ndim < 2 or w.ndim != 3:
        raise DimensionError(f"conv1d: bad ranks {x.shape}, {w.shape}")
    c, length = x.shape[-2:]
    o, wc, k = w.shape
    if wc != c:
        raise DimensionError(f"conv1d: input channels {c} vs kernel {w.shape}")
    if k > length:
        raise DimensionError(f"conv1d: kernel length {k} exceeds input length {length}")
    if stride < 1:
        raise ContractError("conv1d: stride must be >= 1")
    lead, x3 = _lead_flatten(x, 2)
    wd = np.ascontiguousarray(w.data)
    out = kernels.conv1d_forward(x3, wd, stride)
    lout = out.shape[-1]

    def vjp(g):
        g3 = np.ascontiguousarray(g.reshape((-1, o, lout)))
        gx, gw = kernels.conv1d_backward(g3, x3, wd, stride)
        return gx.reshape(x.shape), gw

    return _emit(out.reshape(lead + (o, lout)), (x, w), vjp, "conv1d")


def conv2d(x, kernels_, stride=(1, 1)):
    """Valid 2-D cross-correlation of ``x[..., C, H, W]`` with ``kernels[O, C, KH, KW]``."""
    x, w = as_tensor(x), as_tensor(kernels_)
    if x.ndim < 3 or w.ndim != 4:
        raise DimensionError(f"conv2d: bad ranks {x.shape}, {w.shape}")
    if isinstance(stride, int):
        stride = (stride, stride)
    sh, sw = stride
    c, hh, ww = x.shape[-3:]
    o, wc, kh, kw = w.shape
    if wc != c:
        raise DimensionError(f"conv2d: input channels {c} vs kernel {w.shape}")
    if kh > hh or kw > ww:
        raise DimensionError(f"conv2d: kernel {w.shape[2:]} exceeds input {x.shape[-2:]}")
    lead, x4 = _lead_flatten(x, 3)
    wd = np.ascontiguousarray(w.data)
    out = kernels.conv2d_forward(x4, wd, sh, sw)
    ho, wo = out.shape[-2:]

    def vjp(g):
        g4 = np.ascontiguousarray(g.reshape((-1, o, ho, wo)))
        gx, gw = kernels.conv2d_backward(g4, x4, wd, sh, sw)
        return gx.reshape(x.shape), gw

    return _emit(out.reshape(lead + (o, ho, wo)), (x, w), vjp, "conv2d")


def maxpool1d(x, size=2):
    """Non-overlapping max-pool over the last axis; a trailing remainder is dropped."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"maxpool1d needs [..., C, L], got {x.shape}")
    length = x.shape[-1]
    if size < 1 or size > length:
        raise DimensionError(f"maxpool1d: window {size} vs length {length}")
    lead, x3 = _lead_flatten(x, 2)
    out, idx = kernels.maxpool1d_forward(x3, size)

    def vjp(g):
        g3 = np.ascontiguousarray(g.reshape(out.shape))
        return (kernels.maxpool1d_backward(g3, idx, length).reshape(x.shape),)

    return _emit(out.reshape(x.shape[:-1] + (out.shape[-1],)), (x,), vjp, "maxpool1d")
