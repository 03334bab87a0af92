# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution and pooling kernels.

Same contracts as ``_pykernels``.  Inner loops walk the contiguous output
axis so the C compiler can vectorize them; the accumulation order is
fixed, so results are reproducible bit-for-bit on a given machine.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


cdef inline void _axpy(double *dst, const double *src, double a, Py_ssize_t n,
                       Py_ssize_t sstride) noexcept nogil:
    cdef Py_ssize_t j
    if sstride == 1:
        for j in range(n):
            dst[j] += a * src[j]
    else:
        for j in range(n):
            dst[j] += a * src[j * sstride]


cdef inline void _scatter(double *dst, const double *src, double a, Py_ssize_t n,
                          Py_ssize_t dstride) noexcept nogil:
    cdef Py_ssize_t j
    if dstride == 1:
        for j in range(n):
            dst[j] += a * src[j]
    else:
        for j in range(n):
            dst[j * dstride] += a * src[j]


cdef inline double _dot(const double *a, const double *b, Py_ssize_t n,
                        Py_ssize_t bstride) noexcept nogil:
    cdef Py_ssize_t j
    cdef double acc = 0.0
    if bstride == 1:
        for j in range(n):
            acc += a[j] * b[j]
    else:
        for j in range(n):
            acc += a[j] * b[j * bstride]
    return acc


def conv1d_forward(double[:, :, ::1] x, double[:, :, ::1] w, Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t o = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t lout = (length - k) // stride + 1
    out_arr = np.zeros((n, o, lout))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, p, q, t
    with nogil:
        for i in range(n):
            for p in range(o):
                for q in range(c):
                    for t in range(k):
                        _axpy(&out[i, p, 0], &x[i, q, t], w[p, q, t], lout, stride)
    return out_arr


def conv1d_backward(double[:, :, ::1] g, double[:, :, ::1] x, double[:, :, ::1] w,
                    Py_ssize_t stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t o = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t lout = g.shape[2]
    gx_arr = np.zeros((n, c, length))
    gw_arr = np.zeros((o, c, k))
    cdef double[:, :, ::1] gx = gx_arr
    cdef double[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t i, p, q, t
    cdef const double *src
    with nogil:
        for i in range(n):
            for p in range(o):
                src = &g[i, p, 0]
                for q in range(c):
                    for t in range(k):
                        gw[p, q, t] += _dot(src, &x[i, q, t], lout, stride)
                        _scatter(&gx[i, q, t], src, w[p, q, t], lout, stride)
    return gx_arr, gw_arr


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                   Py_ssize_t sh, Py_ssize_t sw):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], hh = x.shape[2], ww = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (hh - kh) // sh + 1, wo = (ww - kw) // sw + 1
    out_arr = np.zeros((n, o, ho, wo))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, p, q, a, b, u, v
    cdef double acc
    with nogil:
        if wo >= kw:
            for i in range(n):
                for p in range(o):
                    for q in range(c):
                        for a in range(kh):
                            for b in range(kw):
                                for u in range(ho):
                                    _axpy(&out[i, p, u, 0], &x[i, q, u * sh + a, b],
                                          w[p, q, a, b], wo, sw)
        else:
            # narrow outputs: contract along the kernel row instead
            for i in range(n):
                for p in range(o):
                    for u in range(ho):
                        for v in range(wo):
                            acc = 0.0
                            for q in range(c):
                                for a in range(kh):
                                    acc = acc + _dot(&w[p, q, a, 0], &x[i, q, u * sh + a, v * sw],
                                                     kw, 1)
                            out[i, p, u, v] = acc
    return out_arr


def conv2d_backward(double[:, :, :, ::1] g, double[:, :, :, ::1] x,
                    double[:, :, :, ::1] w, Py_ssize_t sh, Py_ssize_t sw):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], hh = x.shape[2], ww = x.shape[3]
    cdef Py_ssize_t o = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = g.shape[2], wo = g.shape[3]
    gx_arr = np.zeros((n, c, hh, ww))
    gw_arr = np.zeros((o, c, kh, kw))
    cdef double[:, :, :, ::1] gx = gx_arr
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef Py_ssize_t i, p, q, a, b, u, v
    cdef double gv
    cdef const double *src
    with nogil:
        if wo >= kw:
            for i in range(n):
                for p in range(o):
                    for q in range(c):
                        for a in range(kh):
                            for b in range(kw):
                                for u in range(ho):
                                    src = &g[i, p, u, 0]
                                    gw[p, q, a, b] += _dot(src, &x[i, q, u * sh + a, b], wo, sw)
                                    _scatter(&gx[i, q, u * sh + a, b], src, w[p, q, a, b], wo, sw)
        else:
            for i in range(n):
                for p in range(o):
                    for u in range(ho):
                        for v in range(wo):
                            gv = g[i, p, u, v]
                            for q in range(c):
                                for a in range(kh):
                                    _axpy(&gx[i, q, u * sh + a, v * sw], &w[p, q, a, 0], gv, kw, 1)
                                    _axpy(&gw[p, q, a, 0], &x[i, q, u * sh + a, v * sw], gv, kw, 1)
    return gx_arr, gw_arr


def maxpool1d_forward(double[:, :, ::1] x, Py_ssize_t size):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t lout = length // size
    out_arr = np.empty((n, c, lout))
    idx_arr = np.empty((n, c, lout), dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t i, q, j, t, best
    cdef double m
    with nogil:
        for i in range(n):
            for q in range(c):
                for j in range(lout):
                    best = j * size
                    m = x[i, q, best]
                    for t in range(1, size):
                        if x[i, q, j * size + t] > m:
                            m = x[i, q, j * size + t]
                            best = j * size + t
                    out[i, q, j] = m
                    idx[i, q, j] = best
    return out_arr, idx_arr


def maxpool1d_backward(double[:, :, ::1] g, cnp.int64_t[:, :, ::1] idx, Py_ssize_t length):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1], lout = g.shape[2]
    gx_arr = np.zeros((n, c, length))
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t i, q, j
    with nogil:
        for i in range(n):
            for q in range(c):
                for j in range(lout):
                    gx[i, q, idx[i, q, j]] += g[i, q, j]
    return gx_arr
