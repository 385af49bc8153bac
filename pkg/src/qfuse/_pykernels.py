"""Pure-numpy versions of the compiled kernels in ``_ckernels.pyx``."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw, stride, ho, wo):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]
    # (N, C, Ho, Wo, kh, kw) -> (C, kh, kw, N, Ho, Wo)
    return np.ascontiguousarray(win.transpose(1, 4, 5, 0, 2, 3)).reshape(c * kh * kw, n * ho * wo)


def col2im(cols, hp, wp, stride):
    c, kh, kw, n, ho, wo = cols.shape
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, i, j].transpose(1, 0, 2, 3)
    return out


def _windows(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)


def maxpool2x2_forward(x):
    win = _windows(x)
    arg = win.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg


def maxpool2x2_backward(grad, arg):
    n, c, h, w = grad.shape
    win = np.zeros((n, c, h, w, 4), dtype=grad.dtype)
    np.put_along_axis(win, arg[..., None].astype(np.intp), grad[..., None], axis=-1)
    return np.ascontiguousarray(win.reshape(n, c, h, w, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h, 2 * w))
