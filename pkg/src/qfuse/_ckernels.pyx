# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops for convolution and pooling.

Every routine mirrors one in ``qfuse._pykernels`` and accumulates in the
same order, so results are bit-identical to the fallback.
"""
import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, int kh, int kw, int stride, int ho, int wo):
    """Patch matrix of shape (C*kh*kw, N*Ho*Wo); each copy is one output row."""
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    dtype = np.float32 if real is float else np.float64
    out = np.empty((c * kh * kw, n * ho * wo), dtype=dtype)
    cdef real[:, ::1] o = out
    cdef real *dst
    cdef real *src
    cdef Py_ssize_t b, oy, ox, ch, i, j, r
    with nogil:
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    r = (ch * kh + i) * kw + j
                    for b in range(n):
                        for oy in range(ho):
                            dst = &o[r, (b * ho + oy) * wo]
                            src = &xp[b, ch, oy * stride + i, j]
                            if stride == 1:
                                for ox in range(wo):
                                    dst[ox] = src[ox]
                            else:
                                for ox in range(wo):
                                    dst[ox] = src[ox * stride]
    return out


def col2im(real[:, :, :, :, :, ::1] cols, int hp, int wp, int stride):
    """Scatter-add ``cols`` of shape (C, kh, kw, N, Ho, Wo) into a padded image."""
    cdef Py_ssize_t c = cols.shape[0], kh = cols.shape[1], kw = cols.shape[2]
    cdef Py_ssize_t n = cols.shape[3], ho = cols.shape[4], wo = cols.shape[5]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    cdef real *src
    cdef real *dst
    cdef Py_ssize_t b, oy, ox, ch, i, j
    # per output element, contributions arrive in ascending (i, j); the fallback matches
    with nogil:
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    for b in range(n):
                        for oy in range(ho):
                            src = &cols[ch, i, j, b, oy, 0]
                            dst = &o[b, ch, oy * stride + i, j]
                            if stride == 1:
                                for ox in range(wo):
                                    dst[ox] += src[ox]
                            else:
                                for ox in range(wo):
                                    dst[ox * stride] += src[ox]
    return out


def maxpool2x2_forward(real[:, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2] // 2, w = x.shape[3] // 2
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c, h, w), dtype=dtype)
    arg = np.empty((n, c, h, w), dtype=np.int8)
    cdef real[:, :, :, ::1] o = out
    cdef cnp.int8_t[:, :, :, ::1] a = arg
    cdef Py_ssize_t b, ch, y, xx
    cdef real best, v
    cdef cnp.int8_t k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(h):
                    for xx in range(w):
                        best = x[b, ch, 2 * y, 2 * xx]
                        k = 0
                        v = x[b, ch, 2 * y, 2 * xx + 1]
                        if v > best:
                            best = v
                            k = 1
                        v = x[b, ch, 2 * y + 1, 2 * xx]
                        if v > best:
                            best = v
                            k = 2
                        v = x[b, ch, 2 * y + 1, 2 * xx + 1]
                        if v > best:
                            best = v
                            k = 3
                        o[b, ch, y, xx] = best
                        a[b, ch, y, xx] = k
    return out, arg


def maxpool2x2_backward(real[:, :, :, ::1] grad, cnp.int8_t[:, :, :, ::1] arg):
    cdef Py_ssize_t n = grad.shape[0], c = grad.shape[1], h = grad.shape[2], w = grad.shape[3]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, 2 * h, 2 * w), dtype=dtype)
    cdef real[:, :, :, ::1] o = out
    cdef Py_ssize_t b, ch, y, xx
    cdef cnp.int8_t k
    with nogil:
        for b in range(n):
            for ch in range(c):
                for y in range(h):
                    for xx in range(w):
                        k = arg[b, ch, y, xx]
                        o[b, ch, 2 * y + k // 2, 2 * xx + k % 2] = grad[b, ch, y, xx]
    return out
