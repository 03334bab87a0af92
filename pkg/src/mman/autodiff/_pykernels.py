"""Numpy implementations of the convolution and pooling kernels.

Layouts: 1-D tensors are ``(N, C, L)``, 2-D tensors ``(N, C, H, W)``.
Kernels are ``(O, C, K)`` and ``(O, C, KH, KW)``.  All inputs must be
C-contiguous float64; callers in ``ops`` guarantee it.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "python"


def conv1d_forward(x, w, stride):
    k = w.shape[2]
    win = sliding_window_view(x, k, axis=2)[:, :, ::stride, :]  # N, C, Lout, K
    out = np.tensordot(win, w, axes=([1, 3], [1, 2]))  # N, Lout, O
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def conv1d_backward(g, x, w, stride):
    n, c, length = x.shape
    k = w.shape[2]
    lout = g.shape[2]
    win = sliding_window_view(x, k, axis=2)[:, :, ::stride, :]
    gw = np.tensordot(g, win, axes=([0, 2], [0, 2]))  # O, C, K
    gx = np.zeros_like(x)
    for j in range(k):
        contrib = np.tensordot(w[:, :, j], g, axes=([0], [1]))  # C, N, Lout
        gx[:, :, j:j + stride * (lout - 1) + 1:stride] += contrib.transpose(1, 0, 2)
    return gx, gw


def conv2d_forward(x, w, sh, sw):
    kh, kw = w.shape[2], w.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]  # N,C,Ho,Wo,KH,KW
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(g, x, w, sh, sw):
    kh, kw = w.shape[2], w.shape[3]
    ho, wo = g.shape[2], g.shape[3]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # O, C, KH, KW
    gx = np.zeros_like(x)
    for a in range(kh):
        for b in range(kw):
            contrib = np.tensordot(w[:, :, a, b], g, axes=([0], [1]))  # C, N, Ho, Wo
            gx[:, :, a:a + sh * (ho - 1) + 1:sh, b:b + sw * (wo - 1) + 1:sw] += (
                contrib.transpose(1, 0, 2, 3)
            )
    return gx, gw


def maxpool1d_forward(x, size):
    n, c, length = x.shape
    lout = length // size
    blocks = x[:, :, :lout * size].reshape(n, c, lout, size)
    arg = np.argmax(blocks, axis=3)  # first maximum wins ties
    out = np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]
    idx = arg + np.arange(lout)[None, None, :] * size
    return np.ascontiguousarray(out), idx.astype(np.int64)


def maxpool1d_backward(g, idx, length):
    n, c, _ = g.shape
    gx = np.zeros((n, c, length))
    np.put_along_axis(gx, idx, g, axis=2)
    return gx
